//! The `heml` command line: synthetic data generation, bottom-up training,
//! metric-tree comparison of two inputs and Precision@K evaluation.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use heml_core::data::{load_dataset, load_manifest, read_hseg, SegmentSample, SyntheticMode, SyntheticSpec};
use heml_core::eval::{evaluate_node, render_table, EvalReport};
use heml_core::hierarchy::{
    build_schedule, load_node_data, node_datasets, train_on_data, CheckpointStore, TrainConfig, DEFAULT_SEED,
    TRAIN_SPLIT, VAL_SPLIT,
};
use heml_core::metric::{LossKind, MarginMode, MinerKind};
use heml_core::tree::{build_metric_tree, export_tree, ExportFormat};
use heml_core::{HemlError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "heml", version, about = "Hierarchical per-segment metric learning")]
pub struct Cli {
    /// Debug-level logs as JSON lines on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic segmented dataset and its manifest.
    Gen(GenArgs),
    /// Train one model per schedule node, leaves first.
    Train(TrainArgs),
    /// Compare two inputs node by node and export the metric tree.
    Tree(TreeArgs),
    /// Precision@K of every node on a split.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Prototype,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginModeArg {
    Abs,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Triplet,
    Snr,
    Ntxent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MinerArg {
    All,
    Semihard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum FormatArg {
    Json,
    Dot,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for the HSEG files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Prototype)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub n_segments: usize,
    #[arg(long, default_value_t = 32)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Held-out samples per class; defaults to half of --n-per-class, 0 skips the split.
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Store directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, value_enum, default_value_t = MarginModeArg::Abs)]
    pub margin_mode: MarginModeArg,
    #[arg(long, value_enum, default_value_t = LossArg::Triplet)]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value_t = MinerArg::Semihard)]
    pub miner: MinerArg,
    #[arg(long, default_value_t = 8)]
    pub embed_dim: usize,
    /// NT-Xent temperature.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Weight of dissimilar pairs in the SNR-contrastive loss.
    #[arg(long, default_value_t = 1.0)]
    pub negative_weight: f64,
    /// Ks reported in summary.json.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 8])]
    pub k: Vec<usize>,
    /// Worker threads for nodes on the same level.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Directory of `<segment>.hseg` files for the first input.
    #[arg(long, requires = "query_b")]
    pub query_a: Option<PathBuf>,
    /// Directory of `<segment>.hseg` files for the second input.
    #[arg(long, requires = "query_a")]
    pub query_b: Option<PathBuf>,
    /// Take both inputs from a manifest split instead of query directories.
    #[arg(long, conflicts_with_all = ["query_a", "query_b"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = VAL_SPLIT)]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub row_a: usize,
    #[arg(long, default_value_t = 0)]
    pub row_b: usize,
    /// Fill value outside segment masks when inputs come from query directories.
    #[arg(long, default_value_t = 0.0)]
    pub background: f32,
    /// Output directory for tree.json / tree.dot.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "format", value_enum, default_values_t = [FormatArg::Json])]
    pub formats: Vec<FormatArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = VAL_SPLIT)]
    pub split: String,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 8])]
    pub k: Vec<usize>,
    /// JSON report path; defaults to `<store>/eval_<split>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            margin: self.margin,
            margin_mode: match self.margin_mode {
                MarginModeArg::Abs => MarginMode::Abs,
                MarginModeArg::Hinge => MarginMode::Hinge,
            },
            loss: match self.loss {
                LossArg::Triplet => LossKind::Triplet,
                LossArg::Snr => LossKind::Snr,
                LossArg::Ntxent => LossKind::Ntxent,
            },
            miner: match self.miner {
                MinerArg::All => MinerKind::All,
                MinerArg::Semihard => MinerKind::SemiHard,
            },
            seed: self.seed,
            embed_dim: self.embed_dim,
            temperature: self.temperature,
            negative_weight: self.negative_weight,
            ..TrainConfig::default()
        }
    }
}

/// Per-node entry of `summary.json`.
#[derive(Debug, Serialize)]
pub struct NodeSummary {
    pub node_id: usize,
    pub name: String,
    pub initial_loss: f64,
    pub final_loss: Option<f64>,
    pub selected_epoch: usize,
    pub eval_split: String,
    pub precision: BTreeMap<usize, f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub manifest_hash: String,
    pub config: TrainConfig,
    pub nodes: Vec<NodeSummary>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &HemlError) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn init_logging(verbose: bool) {
    let mut builder = env_logger::Builder::new();
    if verbose {
        builder.filter_level(log::LevelFilter::Debug).format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    } else {
        builder
            .filter_level(log::LevelFilter::Info)
            .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()));
    }
    // a second call within one process keeps the first logger
    let _ = builder.try_init();
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Tree(a) => cmd_tree(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| HemlError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_per_class: a.n_per_class,
        n_classes: a.classes,
        n_segments: a.n_segments,
        input_dim: a.input_dim,
        noise_sigma: a.noise,
        mode: match a.mode {
            ModeArg::Prototype => SyntheticMode::Prototype,
            ModeArg::Xor => SyntheticMode::Xor,
        },
        seed: a.seed,
        val_per_class: a.val_per_class.unwrap_or(a.n_per_class / 2),
    };
    let data = heml_core::data::generate_synthetic(&spec)?;
    data.write(&a.out)?;
    let sizes: Vec<String> = data
        .splits
        .iter()
        .map(|(split, segs)| format!("{split}={}", segs.values().next().map_or(0, |d| d.len())))
        .collect();
    println!(
        "generated {:?} data: n {}, dim={}, segments={}, seed={}",
        spec.mode,
        sizes.join(" "),
        spec.input_dim,
        spec.n_segments,
        spec.seed
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(HemlError::Usage("--jobs must be at least 1".into()));
    }
    let config = a.config();
    config.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let schedule = build_schedule(&manifest)?;
    let data = load_node_data(&manifest, &schedule)?;
    let (eval_split, eval_data) = if data.val.is_empty() {
        (TRAIN_SPLIT, &data.train)
    } else {
        (VAL_SPLIT, &data.val)
    };
    // reject unusable ks before spending time on training
    if let Some(ds) = eval_data.values().next() {
        check_ks(&a.k, ds.len())?;
    }
    let store = train_on_data(&schedule, &data, &config, manifest.content_hash(), a.jobs)?;
    store.save(&a.out)?;
    let mut nodes = Vec::new();
    for node in &schedule.nodes {
        let ckpt = store.get(node.id)?;
        let report = evaluate_node(ckpt, &eval_data[&node.id], &a.k)?;
        log::info!(
            "node {} ({}): loss {:?} -> {:?}, P@{} {:.3}",
            node.id,
            node.name,
            ckpt.initial_loss,
            ckpt.final_loss(),
            a.k[0],
            report.precision[&a.k[0]]
        );
        nodes.push(NodeSummary {
            node_id: node.id,
            name: node.name.clone(),
            initial_loss: ckpt.initial_loss,
            final_loss: ckpt.final_loss(),
            selected_epoch: ckpt.selected_epoch,
            eval_split: eval_split.to_string(),
            precision: report.precision,
        });
    }
    let summary = RunSummary {
        manifest_hash: store.manifest_hash.clone(),
        config,
        nodes,
    };
    write_file(&a.out.join("summary.json"), &to_json(&summary))?;
    println!("trained {} nodes into {}", schedule.len(), a.out.display());
    Ok(())
}

fn check_ks(ks: &[usize], n: usize) -> Result<()> {
    if ks.is_empty() {
        return Err(HemlError::Usage("--k needs at least one value".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(HemlError::Usage(format!(
            "k = {k} is out of range for {n} queries (1..={})",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

/// One sample per leaf read from `<dir>/<segment>.hseg`; missing files are
/// reported together.
fn read_query_dir(dir: &Path, leaves: &[String], row: usize) -> Result<BTreeMap<String, SegmentSample>> {
    let missing: Vec<&str> = leaves
        .iter()
        .filter(|s| !dir.join(format!("{s}.hseg")).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(HemlError::Data(format!(
            "{} has no query file for segments {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    leaves
        .iter()
        .map(|s| {
            Ok((
                s.clone(),
                pick_row(&read_hseg(&dir.join(format!("{s}.hseg")), s)?, row)?,
            ))
        })
        .collect()
}

fn pick_row(ds: &heml_core::data::Dataset, row: usize) -> Result<SegmentSample> {
    if row >= ds.len() {
        return Err(HemlError::Usage(format!(
            "row {row} is out of range for {} with {} samples",
            ds.segment_id,
            ds.len()
        )));
    }
    Ok(ds.sample(row))
}

pub fn cmd_tree(a: &TreeArgs) -> Result<()> {
    if a.manifest.is_none() && (a.query_a.is_none() || a.query_b.is_none()) {
        return Err(HemlError::Usage("give --query-a and --query-b, or --manifest".into()));
    }
    let store = CheckpointStore::load(&a.store)?;
    let leaves: Vec<String> = store.schedule.leaves().map(|n| n.name.clone()).collect();
    let (query_a, query_b, background) = match (&a.query_a, &a.query_b, &a.manifest) {
        (Some(qa), Some(qb), _) => (
            read_query_dir(qa, &leaves, a.row_a)?,
            read_query_dir(qb, &leaves, a.row_b)?,
            a.background,
        ),
        (_, _, Some(m)) => {
            let manifest = load_manifest(m)?;
            let mut qa = BTreeMap::new();
            let mut qb = BTreeMap::new();
            for leaf in &leaves {
                let ds = load_dataset(&manifest, leaf, &a.split)?;
                qa.insert(leaf.clone(), pick_row(&ds, a.row_a)?);
                qb.insert(leaf.clone(), pick_row(&ds, a.row_b)?);
            }
            (qa, qb, manifest.background_value)
        }
        _ => unreachable!("checked above"),
    };
    let tree = build_metric_tree(&store, &query_a, &query_b, background)?;
    std::fs::create_dir_all(&a.out).map_err(|source| HemlError::Io {
        path: a.out.display().to_string(),
        source,
    })?;
    let formats: BTreeSet<FormatArg> = a.formats.iter().copied().collect();
    for fmt in formats {
        let fmt = match fmt {
            FormatArg::Json => ExportFormat::Json,
            FormatArg::Dot => ExportFormat::Dot,
        };
        let path = a.out.join(format!("tree.{}", fmt.extension()));
        write_file(&path, &export_tree(&tree, fmt)?)?;
        log::info!("wrote {}", path.display());
    }
    for node in &tree.nodes {
        log::debug!(
            "node {} ({}) raw {:.6} normalized {:.6} y {:.6}",
            node.id,
            node.name,
            node.raw,
            node.normalized,
            node.decision
        );
    }
    println!("z = {:.3} (of {} leaves)", tree.z, tree.leaf_count());
    println!("root normalized distance = {:.3}", tree.root_node().normalized);
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let store = CheckpointStore::load(&a.store)?;
    let manifest = load_manifest(&a.manifest)?;
    if manifest.content_hash() != store.manifest_hash {
        return Err(HemlError::Data(format!(
            "store {} was trained on a different manifest than {}",
            a.store.display(),
            a.manifest.display()
        )));
    }
    let data = node_datasets(&manifest, &store.schedule, &a.split)?;
    if let Some(ds) = data.values().next() {
        check_ks(&a.k, ds.len())?;
    }
    // node ids follow level order: leaves first, final node last
    let reports: Vec<EvalReport> = store
        .schedule
        .nodes
        .iter()
        .map(|n| evaluate_node(store.get(n.id)?, &data[&n.id], &a.k))
        .collect::<Result<_>>()?;
    print!("{}", render_table(&reports));
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.store.join(format!("eval_{}.json", a.split)));
    write_file(&out, &to_json(&reports))?;
    Ok(())
}
