use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, CheckpointStore};
use super::config::TrainConfig;
use super::schedule::{build_schedule, CombinationSchedule};
use crate::data::{compose_datasets, load_dataset, Dataset, SegmentManifest};
use crate::error::{HemlError, Result};
use crate::eval::precision_at_k;
use crate::metric::MetricLoss;
use crate::numerics::{average_params, embed_batch, mlp_backward, mlp_forward, sgd_step_model, EmbedderModel};
use crate::rng;

/// Epoch mean losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Seed of node `node_id`'s streams.
pub fn node_seed(base: u64, node_id: usize) -> u64 {
    rng::mix_seed(base, node_id as u64)
}

/// Class-balanced batches: each class is shuffled, classes are interleaved
/// round-robin, and the sequence is cut into `batch_size` chunks.
pub fn class_balanced_batches<R: rand::Rng>(labels: &[i32], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut queues: Vec<Vec<usize>> = by_class.into_values().collect();
    for q in &mut queues {
        q.shuffle(rng);
        q.reverse();
    }
    let mut order = Vec::with_capacity(labels.len());
    while queues.iter().any(|q| !q.is_empty()) {
        for q in &mut queues {
            if let Some(i) = q.pop() {
                order.push(i);
            }
        }
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn trainable(labels: &[i32]) -> bool {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts.len() >= 2 && counts.values().any(|&c| c >= 2)
}

fn batch_loss(model: &EmbedderModel, loss: &dyn MetricLoss, dataset: &Dataset, idx: &[usize]) -> Result<f64> {
    let feats = dataset.features.select_rows(idx).to_f64();
    let labels: Vec<i32> = idx.iter().map(|&i| dataset.labels[i]).collect();
    let (emb, _) = mlp_forward(model, &feats)?;
    Ok(loss.compute(&emb, &labels)?.loss)
}

/// Trains one node's model. Without `init`, starts from a fresh seeded
/// model. With a validation set, keeps the epoch-end parameters with the best
/// validation P@1 (latest wins ties); otherwise keeps the final epoch.
pub fn train_segment(
    node_id: usize,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    init: Option<&EmbedderModel>,
) -> Result<Checkpoint> {
    let fail = |message: String| HemlError::Training { node_id, message };
    config.validate()?;
    if dataset.is_empty() {
        return Err(fail("empty training set".into()));
    }
    if dataset.class_count() < 2 {
        return Err(fail(format!("dataset {} has a single class", dataset.segment_id)));
    }
    let mut model = match init {
        Some(m) => {
            if m.input_dim() != dataset.dim() {
                return Err(fail(format!(
                    "initial model expects {} features, data has {}",
                    m.input_dim(),
                    dataset.dim()
                )));
            }
            m.clone()
        }
        None => EmbedderModel::seeded(&config.architecture(dataset.dim()), config.seed)?,
    };
    let loss = config.build_loss();
    let mut batch_rng = rng::stream(config.seed, rng::purpose::BATCHES);
    let validation = validation.filter(|v| v.len() >= 2);

    let mut history = Vec::with_capacity(config.epochs);
    let mut val_history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());
    let mut initial_loss = None;

    for epoch in 1..=config.epochs {
        let batches: Vec<Vec<usize>> = class_balanced_batches(&dataset.labels, config.batch_size, &mut batch_rng)
            .into_iter()
            .filter(|b| trainable(&b.iter().map(|&i| dataset.labels[i]).collect::<Vec<_>>()))
            .collect();
        if batches.is_empty() {
            return Err(fail("no batch contains two classes with a positive pair".into()));
        }
        if initial_loss.is_none() {
            let mut total = 0.0;
            for b in &batches {
                total += batch_loss(&model, loss.as_ref(), dataset, b).map_err(|e| fail(e.to_string()))?;
            }
            initial_loss = Some(total / batches.len() as f64);
        }
        let mut total = 0.0;
        for idx in &batches {
            let feats = dataset.features.select_rows(idx).to_f64();
            let labels: Vec<i32> = idx.iter().map(|&i| dataset.labels[i]).collect();
            let step = (|| {
                let (emb, cache) = mlp_forward(&model, &feats)?;
                let out = loss.compute(&emb, &labels)?;
                let (grads, _) = mlp_backward(&model, &cache, &out.grad)?;
                Ok::<_, HemlError>((out.loss, sgd_step_model(&model, &grads, config.learning_rate)?))
            })();
            let (value, next) = step.map_err(|e| fail(format!("epoch {epoch}: {e}")))?;
            total += value;
            model = next;
        }
        let mean = total / batches.len() as f64;
        if !mean.is_finite() || mean > DIVERGENCE_LIMIT {
            return Err(fail(format!(
                "diverged at epoch {epoch}: mean loss {mean} (history {history:?})"
            )));
        }
        history.push(mean);
        log::debug!("node {node_id} epoch {epoch} loss {mean:.6}");

        if let Some(val) = validation {
            let emb = embed_batch(&model, &val.features).map_err(|e| fail(e.to_string()))?;
            let p1 = precision_at_k(&emb, &val.labels, 1).map_err(|e| fail(e.to_string()))?;
            val_history.push(p1);
            if p1 >= best.0 {
                best = (p1, epoch, model.clone());
            }
        }
    }

    let initial_loss = match initial_loss {
        Some(l) => l,
        None => {
            // no epochs ran: report the starting model's loss on one pass
            let batches = class_balanced_batches(&dataset.labels, config.batch_size, &mut batch_rng);
            let usable: Vec<_> = batches
                .iter()
                .filter(|b| trainable(&b.iter().map(|&i| dataset.labels[i]).collect::<Vec<_>>()))
                .collect();
            let mut total = 0.0;
            for b in &usable {
                total += batch_loss(&model, loss.as_ref(), dataset, b).map_err(|e| fail(e.to_string()))?;
            }
            if usable.is_empty() {
                0.0
            } else {
                total / usable.len() as f64
            }
        }
    };

    let (selected_epoch, model) = if validation.is_some() && config.epochs > 0 {
        (best.1, best.2)
    } else {
        (config.epochs, model)
    };
    Ok(Checkpoint {
        node_id,
        name: dataset.segment_id.clone(),
        model,
        config: config.clone(),
        seed: config.seed,
        initial_loss,
        history,
        val_history,
        selected_epoch,
    })
}

/// Initial model of a combined node: the elementwise mean of its two
/// children, or a verbatim copy of a pass-through node's only child.
pub fn init_from_children(children: &[&Checkpoint]) -> Result<EmbedderModel> {
    match children {
        [only] => Ok(only.model.clone()),
        [left, right] => {
            if !left.model.same_architecture(&right.model) {
                return Err(HemlError::Shape(format!(
                    "children {} and {} have different architectures",
                    left.node_id, right.node_id
                )));
            }
            Ok(EmbedderModel {
                trunk: average_params(&left.model.trunk, &right.model.trunk)?,
                embedder: average_params(&left.model.embedder, &right.model.embedder)?,
            })
        }
        _ => Err(HemlError::Usage(format!(
            "a combined node has 1 or 2 children, got {}",
            children.len()
        ))),
    }
}

/// Per-node training data for every split that is present.
#[derive(Debug, Clone)]
pub struct NodeData {
    pub train: BTreeMap<usize, Dataset>,
    pub val: BTreeMap<usize, Dataset>,
}

pub const TRAIN_SPLIT: &str = "train";
pub const VAL_SPLIT: &str = "val";

/// Composes every internal node's data from in-memory leaf datasets,
/// index-aligned.
pub fn compose_node_datasets(
    schedule: &CombinationSchedule,
    leaves: &BTreeMap<String, Dataset>,
    background: f32,
) -> Result<BTreeMap<usize, Dataset>> {
    let mut out: BTreeMap<usize, Dataset> = BTreeMap::new();
    for node in &schedule.nodes {
        let ds = if node.is_leaf() {
            leaves
                .get(&node.name)
                .cloned()
                .ok_or_else(|| HemlError::Data(format!("no data for leaf segment {:?}", node.name)))?
        } else {
            let parts: Vec<&Dataset> = node.children.iter().map(|c| &out[c]).collect();
            compose_datasets(&parts, background)?.value
        };
        out.insert(node.id, ds);
    }
    Ok(out)
}

/// Loads the leaves of `split` and composes every internal node's data.
pub fn node_datasets(
    manifest: &SegmentManifest,
    schedule: &CombinationSchedule,
    split: &str,
) -> Result<BTreeMap<usize, Dataset>> {
    let mut leaves = BTreeMap::new();
    for leaf in schedule.leaves() {
        leaves.insert(leaf.name.clone(), load_dataset(manifest, &leaf.name, split)?);
    }
    compose_node_datasets(schedule, &leaves, manifest.background_value)
}

impl NodeData {
    /// Node data from in-memory leaf datasets keyed by split name.
    pub fn from_splits(
        schedule: &CombinationSchedule,
        splits: &BTreeMap<String, BTreeMap<String, Dataset>>,
        background: f32,
    ) -> Result<Self> {
        let train = splits
            .get(TRAIN_SPLIT)
            .ok_or_else(|| HemlError::Data("no train split".into()))?;
        let train = compose_node_datasets(schedule, train, background)?;
        let val = match splits.get(VAL_SPLIT) {
            Some(v) => compose_node_datasets(schedule, v, background)?,
            None => BTreeMap::new(),
        };
        Ok(Self { train, val })
    }
}

pub fn load_node_data(manifest: &SegmentManifest, schedule: &CombinationSchedule) -> Result<NodeData> {
    let train = node_datasets(manifest, schedule, TRAIN_SPLIT)?;
    let val = if manifest.splits.contains_key(VAL_SPLIT) {
        node_datasets(manifest, schedule, VAL_SPLIT)?
    } else {
        BTreeMap::new()
    };
    Ok(NodeData { train, val })
}

/// Trains every node of the schedule, level by level. Nodes within a level
/// run on up to `jobs` threads; results do not depend on `jobs`.
pub fn train_on_data(
    schedule: &CombinationSchedule,
    data: &NodeData,
    config: &TrainConfig,
    manifest_hash: String,
    jobs: usize,
) -> Result<CheckpointStore> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HemlError::Usage(format!("cannot start worker pool: {e}")))?;
    let mut checkpoints: BTreeMap<usize, Checkpoint> = BTreeMap::new();
    for level in schedule.levels() {
        let done = &checkpoints;
        let run = |&id: &usize| -> Result<Checkpoint> {
            let node = schedule.node(id);
            let mut node_config = config.clone();
            node_config.seed = node_seed(config.seed, id);
            let init = if node.is_leaf() {
                None
            } else {
                let kids: Vec<&Checkpoint> = node.children.iter().map(|c| &done[c]).collect();
                Some(init_from_children(&kids).map_err(|e| HemlError::Training {
                    node_id: id,
                    message: e.to_string(),
                })?)
            };
            let mut ckpt = train_segment(id, &data.train[&id], data.val.get(&id), &node_config, init.as_ref())
                .map_err(|e| match e {
                    e @ HemlError::Training { .. } => e,
                    other => HemlError::Training {
                        node_id: id,
                        message: other.to_string(),
                    },
                })?;
            // echo the run-level config; the node seed is recorded separately
            ckpt.config = config.clone();
            log::info!(
                "trained node {id} ({}) final loss {:?} selected epoch {}",
                node.name,
                ckpt.final_loss(),
                ckpt.selected_epoch
            );
            Ok(ckpt)
        };
        let results: Vec<Result<Checkpoint>> = if jobs > 1 {
            pool.install(|| level.par_iter().map(run).collect())
        } else {
            level.iter().map(run).collect()
        };
        for r in results {
            let ckpt = r?;
            checkpoints.insert(ckpt.node_id, ckpt);
        }
    }
    Ok(CheckpointStore {
        manifest_hash,
        schedule: schedule.clone(),
        checkpoints,
    })
}

/// Bottom-up training of the whole hierarchy described by `manifest`.
pub fn train_bottom_up(manifest: &SegmentManifest, config: &TrainConfig, jobs: usize) -> Result<CheckpointStore> {
    let schedule = build_schedule(manifest)?;
    let data = load_node_data(manifest, &schedule)?;
    let missing: BTreeSet<usize> = schedule
        .nodes
        .iter()
        .map(|n| n.id)
        .filter(|id| !data.train.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(HemlError::Data(format!("no training data for nodes {missing:?}")));
    }
    train_on_data(&schedule, &data, config, manifest.content_hash(), jobs)
}
