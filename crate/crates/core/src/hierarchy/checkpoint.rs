//! Checkpoint files, little-endian:
//!
//! ```text
//! "HEMLCKP1" | u32 header_len | header_len bytes of JSON header
//! f32 parameters: trunk layers then embedder layers, each weights
//! (row-major, out x in) followed by bias
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::schedule::CombinationSchedule;
use crate::error::{HemlError, Result};
use crate::numerics::{Activation, DenseMatrix, EmbedderModel, Layer, MlpParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HEMLCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;
const STORE_INDEX: &str = "store.json";

/// Trained parameters of one schedule node plus how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub node_id: usize,
    pub name: String,
    pub model: EmbedderModel,
    pub config: TrainConfig,
    /// Seed of this node's streams (derived from `config.seed`).
    pub seed: u64,
    /// Mean training loss of the starting model, before any update.
    pub initial_loss: f64,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    /// Validation P@1 per epoch; empty without a validation split.
    pub val_history: Vec<f64>,
    /// Epoch whose end-of-epoch parameters were kept (0 = initial model).
    pub selected_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchitectureHeader {
    input_dim: usize,
    embed_dim: usize,
    trunk: Vec<[usize; 2]>,
    embedder: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivationHeader {
    trunk: Vec<Activation>,
    embedder: Vec<Activation>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format_version: u32,
    node_id: usize,
    name: String,
    architecture: ArchitectureHeader,
    activations: ActivationHeader,
    seed: u64,
    loss: String,
    epochs: usize,
    initial_loss: f64,
    history: Vec<f64>,
    val_history: Vec<f64>,
    selected_epoch: usize,
    param_count: usize,
    config: TrainConfig,
}

fn pairs(p: &MlpParams) -> Vec<[usize; 2]> {
    p.dims().into_iter().map(|(i, o)| [i, o]).collect()
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.history.len() != self.config.epochs {
            return Err(HemlError::Format(format!(
                "checkpoint {}: history has {} entries for {} epochs",
                self.node_id,
                self.history.len(),
                self.config.epochs
            )));
        }
        if self.selected_epoch > self.config.epochs {
            return Err(HemlError::Format(format!(
                "checkpoint {}: selected epoch out of range",
                self.node_id
            )));
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().copied()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            node_id: self.node_id,
            name: self.name.clone(),
            architecture: ArchitectureHeader {
                input_dim: self.model.input_dim(),
                embed_dim: self.model.embed_dim(),
                trunk: pairs(&self.model.trunk),
                embedder: pairs(&self.model.embedder),
            },
            activations: ActivationHeader {
                trunk: self.model.trunk.activations(),
                embedder: self.model.embedder.activations(),
            },
            seed: self.seed,
            loss: serde_json::to_value(self.config.loss)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            epochs: self.config.epochs,
            initial_loss: self.initial_loss,
            history: self.history.clone(),
            val_history: self.val_history.clone(),
            selected_epoch: self.selected_epoch,
            param_count: self.model.trunk.param_count() + self.model.embedder.param_count(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| HemlError::Format(format!("checkpoint header does not serialize: {e}")))?;
        let mut out = Vec::with_capacity(12 + json.len() + header.param_count * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self
            .model
            .trunk
            .flat_values()
            .into_iter()
            .chain(self.model.embedder.flat_values())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(HemlError::Format("not a HEMLCKP1 checkpoint".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + header_len)
            .ok_or_else(|| HemlError::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| HemlError::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(HemlError::Format(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        let raw = &bytes[12 + header_len..];
        if raw.len() != header.param_count * 4 {
            return Err(HemlError::Format(format!(
                "checkpoint declares {} parameters but carries {} bytes",
                header.param_count,
                raw.len()
            )));
        }
        let mut values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut build = |dims: &[[usize; 2]], acts: &[Activation]| -> Result<MlpParams> {
            if dims.len() != acts.len() {
                return Err(HemlError::Format("activation list does not match layers".into()));
            }
            let mut layers = Vec::with_capacity(dims.len());
            for (&[input, output], &act) in dims.iter().zip(acts) {
                let w: Vec<f32> = values.by_ref().take(input * output).collect();
                let b: Vec<f32> = values.by_ref().take(output).collect();
                if w.len() != input * output || b.len() != output {
                    return Err(HemlError::Format("parameter block shorter than architecture".into()));
                }
                layers.push(Layer::new(DenseMatrix::new(output, input, w)?, b, act)?);
            }
            MlpParams::new(layers).map_err(|e| HemlError::Format(e.to_string()))
        };
        let trunk = build(&header.architecture.trunk, &header.activations.trunk)?;
        let embedder = build(&header.architecture.embedder, &header.activations.embedder)?;
        let model = EmbedderModel::new(trunk, embedder).map_err(|e| HemlError::Format(e.to_string()))?;
        if model.input_dim() != header.architecture.input_dim || model.embed_dim() != header.architecture.embed_dim {
            return Err(HemlError::Format(
                "architecture header disagrees with layer dimensions".into(),
            ));
        }
        let ckpt = Checkpoint {
            node_id: header.node_id,
            name: header.name,
            model,
            config: header.config,
            seed: header.seed,
            initial_loss: header.initial_loss,
            history: header.history,
            val_history: header.val_history,
            selected_epoch: header.selected_epoch,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| HemlError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HemlError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            HemlError::Format(m) => HemlError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreIndex {
    format_version: u32,
    manifest_hash: String,
    schedule: CombinationSchedule,
}

/// One checkpoint per schedule node.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    pub manifest_hash: String,
    pub schedule: CombinationSchedule,
    pub checkpoints: BTreeMap<usize, Checkpoint>,
}

pub fn checkpoint_file_name(node_id: usize) -> String {
    format!("node_{node_id:03}.ckpt")
}

impl CheckpointStore {
    pub fn is_complete(&self) -> bool {
        self.schedule.nodes.iter().all(|n| self.checkpoints.contains_key(&n.id))
    }

    pub fn get(&self, node_id: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .get(&node_id)
            .ok_or_else(|| HemlError::Data(format!("store has no checkpoint for node {node_id}")))
    }

    /// Writes `store.json` and one checkpoint file per node; returns the
    /// checkpoint paths in node order.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| HemlError::io(dir, e))?;
        let index = StoreIndex {
            format_version: CHECKPOINT_VERSION,
            manifest_hash: self.manifest_hash.clone(),
            schedule: self.schedule.clone(),
        };
        let path = dir.join(STORE_INDEX);
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(&path, json).map_err(|e| HemlError::io(&path, e))?;
        let mut written = Vec::new();
        for (id, ckpt) in &self.checkpoints {
            let p = dir.join(checkpoint_file_name(*id));
            ckpt.save(&p)?;
            written.push(p);
        }
        Ok(written)
    }

    /// Loads a complete store; any missing node checkpoint is an error.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STORE_INDEX);
        let text = std::fs::read_to_string(&path).map_err(|e| HemlError::io(&path, e))?;
        let index: StoreIndex =
            serde_json::from_str(&text).map_err(|e| HemlError::Format(format!("{}: {e}", path.display())))?;
        index.schedule.validate()?;
        let mut checkpoints = BTreeMap::new();
        let mut missing = Vec::new();
        for node in &index.schedule.nodes {
            let p = dir.join(checkpoint_file_name(node.id));
            if !p.exists() {
                missing.push(node.id);
                continue;
            }
            let ckpt = Checkpoint::load(&p)?;
            if ckpt.node_id != node.id || ckpt.name != node.name {
                return Err(HemlError::Format(format!(
                    "{} holds node {} ({}), expected {} ({})",
                    p.display(),
                    ckpt.node_id,
                    ckpt.name,
                    node.id,
                    node.name
                )));
            }
            checkpoints.insert(node.id, ckpt);
        }
        if !missing.is_empty() {
            return Err(HemlError::Data(format!(
                "incomplete store: no checkpoint for nodes {missing:?}"
            )));
        }
        Ok(Self {
            manifest_hash: index.manifest_hash,
            schedule: index.schedule,
            checkpoints,
        })
    }
}
