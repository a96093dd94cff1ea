//! Metric trees: for a pair of queries, the schedule annotated with the
//! symmetrized SNR distance and a local decision at every node.

mod export;
mod importance;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use export::{export_tree, parse_tree_json, ExportFormat};
pub use importance::{feature_importance, gradient_importance, segment_importance, Decision, PairDecision, QuerySide};

use crate::data::{compose_segments, SegmentSample};
use crate::error::{HemlError, Result};
use crate::hierarchy::{Checkpoint, CheckpointStore, ScheduleNode};
use crate::metric::{normalize_distance, snr_distance};
use crate::numerics::{mlp_forward, DenseMatrix, EmbedderModel};

/// A node's trained model, used read-only to embed queries of that node's
/// segment composition.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    pub node_id: usize,
    pub name: String,
    pub model: EmbedderModel,
}

impl InferenceModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.model.validate().map_err(|e| HemlError::Format(e.to_string()))?;
        Ok(Self {
            node_id: ckpt.node_id,
            name: ckpt.name.clone(),
            model: ckpt.model.clone(),
        })
    }

    pub fn check_sample(&self, sample: &SegmentSample) -> Result<()> {
        if sample.segment_id != self.name {
            return Err(HemlError::Usage(format!(
                "segment {:?} cannot be queried against node {:?}",
                sample.segment_id, self.name
            )));
        }
        if sample.features.len() != self.model.input_dim() {
            return Err(HemlError::Shape(format!(
                "sample has {} features, node {} expects {}",
                sample.features.len(),
                self.name,
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    pub fn embed(&self, sample: &SegmentSample) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let x = DenseMatrix::new(
            1,
            sample.features.len(),
            sample.features.iter().map(|&v| v as f64).collect(),
        )?;
        let (e, _) = mlp_forward(&self.model, &x)?;
        Ok(e.into_values())
    }
}

/// `(d(x, y) + d(y, x)) / 2` on SNR distance.
pub fn symmetric_snr(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(0.5 * (snr_distance(x, y)? + snr_distance(y, x)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub name: String,
    pub children: Vec<usize>,
    /// Symmetrized SNR distance.
    pub raw: f64,
    /// `raw / (1 + raw)`, in `[0, 1)`.
    pub normalized: f64,
    /// Local decision `1 - normalized`, in `(0, 1]`.
    pub decision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<BTreeMap<usize, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    /// Global decision: sum of leaf decisions.
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<[String; 2]>,
}

impl MetricTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    pub fn root_node(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    /// Per node, the sum of the leaf decisions beneath it, so a parent's
    /// value equals the sum of its children's.
    pub fn aggregated_decisions(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        // children always have smaller ids than their parent
        for n in &self.nodes {
            out[n.id] = if n.children.is_empty() {
                n.decision
            } else {
                n.children.iter().map(|&c| out[c]).sum()
            };
        }
        out
    }

    /// Attaches P@K figures from an evaluation run to the matching nodes.
    pub fn attach_metrics(&mut self, reports: &[crate::eval::EvalReport]) {
        for r in reports {
            if let Some(n) = self.nodes.iter_mut().find(|n| n.id == r.node_id) {
                n.metrics = Some(r.precision.clone());
            }
        }
    }
}

/// Global decision `z`: the sum of all leaf decisions.
pub fn aggregate_decisions(tree: &MetricTree) -> Result<f64> {
    let leaves: Vec<&TreeNode> = tree.nodes.iter().filter(|n| n.children.is_empty()).collect();
    if leaves.is_empty() {
        return Err(HemlError::Usage("tree has no leaves".into()));
    }
    if let Some(bad) = leaves.iter().find(|n| !n.decision.is_finite()) {
        return Err(HemlError::Usage(format!("leaf {} has no decision", bad.name)));
    }
    Ok(leaves.iter().map(|n| n.decision).sum())
}

fn node_sample(node: &ScheduleNode, query: &BTreeMap<String, SegmentSample>, background: f32) -> Result<SegmentSample> {
    let parts: Vec<SegmentSample> = node.leaves.iter().map(|l| query[l].clone()).collect();
    let sample = compose_segments(&parts, background)?.value;
    debug_assert_eq!(sample.segment_id, node.name);
    Ok(sample)
}

/// Composes both queries' leaf segments at every node, embeds them with that
/// node's model and records the distance and decision.
pub fn build_metric_tree(
    store: &CheckpointStore,
    query_a: &BTreeMap<String, SegmentSample>,
    query_b: &BTreeMap<String, SegmentSample>,
    background: f32,
) -> Result<MetricTree> {
    if !store.is_complete() {
        let missing: Vec<usize> = store
            .schedule
            .nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !store.checkpoints.contains_key(id))
            .collect();
        return Err(HemlError::Usage(format!(
            "store is missing checkpoints for nodes {missing:?}"
        )));
    }
    let mut missing = Vec::new();
    for leaf in store.schedule.leaves() {
        for (side, q) in [("a", query_a), ("b", query_b)] {
            match q.get(&leaf.name) {
                None => missing.push(format!("{side}:{}", leaf.name)),
                Some(s) if s.segment_id != leaf.name => {
                    return Err(HemlError::Usage(format!(
                        "query {side} supplies segment {:?} under key {:?}",
                        s.segment_id, leaf.name
                    )))
                }
                Some(_) => {}
            }
        }
    }
    if !missing.is_empty() {
        return Err(HemlError::Usage(format!(
            "queries are missing leaf segments {missing:?}"
        )));
    }
    let mut nodes = Vec::with_capacity(store.schedule.len());
    for node in &store.schedule.nodes {
        let inference = InferenceModel::from_checkpoint(store.get(node.id)?)?;
        let x = inference.embed(&node_sample(node, query_a, background)?)?;
        let y = inference.embed(&node_sample(node, query_b, background)?)?;
        let raw = symmetric_snr(&x, &y)?;
        let normalized = normalize_distance(raw)?;
        nodes.push(TreeNode {
            id: node.id,
            name: node.name.clone(),
            children: node.children.clone(),
            raw,
            normalized,
            decision: 1.0 - normalized,
            metrics: None,
        });
    }
    let mut tree = MetricTree {
        nodes,
        root: store.schedule.root,
        z: 0.0,
        queries: None,
    };
    tree.z = aggregate_decisions(&tree)?;
    Ok(tree)
}
