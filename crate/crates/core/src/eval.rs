//! Precision@K retrieval evaluation.
//!
//! The gallery is the query set itself with the query excluded; neighbours
//! are ranked by euclidean distance, ties broken by ascending index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HemlError, Result};
use crate::hierarchy::Checkpoint;
use crate::metric::{euclidean, MetricKind};
use crate::numerics::{embed_batch, DenseMatrix, EmbedderModel};

pub const DEFAULT_KS: [usize; 3] = [1, 2, 8];

fn check_k(n: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(HemlError::Usage(format!(
            "Precision@K needs at least 2 samples, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(HemlError::Usage(format!(
            "k = {k} is outside 1..={} for {n} samples",
            n - 1
        )));
    }
    Ok(())
}

/// Precision at each requested `k`, sharing one neighbour ranking per query.
pub fn precision_at_ks(embeddings: &DenseMatrix<f64>, labels: &[i32], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(HemlError::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    for &k in ks {
        check_k(n, k)?;
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for q in 0..n {
        ranked.clear();
        ranked.extend(
            (0..n)
                .filter(|&j| j != q)
                .map(|j| (euclidean(embeddings.row(q), embeddings.row(j)), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if max_k < ranked.len() {
            ranked.select_nth_unstable_by(max_k - 1, cmp);
            ranked.truncate(max_k);
        }
        ranked.sort_unstable_by(cmp);
        for (&k, h) in hits.iter_mut() {
            *h += ranked[..k].iter().filter(|&&(_, j)| labels[j] == labels[q]).count();
        }
    }
    Ok(hits.into_iter().map(|(k, h)| (k, h as f64 / (n * k) as f64)).collect())
}

pub fn precision_at_k(embeddings: &DenseMatrix<f64>, labels: &[i32], k: usize) -> Result<f64> {
    Ok(precision_at_ks(embeddings, labels, &[k])?[&k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub node_id: usize,
    pub name: String,
    /// k -> precision, ascending in k.
    pub precision: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub metric: MetricKind,
}

pub fn evaluate_model(
    node_id: usize,
    name: &str,
    model: &EmbedderModel,
    dataset: &Dataset,
    ks: &[usize],
) -> Result<EvalReport> {
    let emb = embed_batch(model, &dataset.features)?;
    Ok(EvalReport {
        node_id,
        name: name.to_string(),
        precision: precision_at_ks(&emb, &dataset.labels, ks)?,
        n_queries: dataset.len(),
        metric: MetricKind::Euclidean,
    })
}

/// Embeds `dataset` with the checkpoint's model and scores it at every `k`.
pub fn evaluate_node(checkpoint: &Checkpoint, dataset: &Dataset, ks: &[usize]) -> Result<EvalReport> {
    if dataset.segment_id != checkpoint.name {
        return Err(HemlError::Usage(format!(
            "dataset {:?} does not belong to node {:?}",
            dataset.segment_id, checkpoint.name
        )));
    }
    evaluate_model(checkpoint.node_id, &checkpoint.name, &checkpoint.model, dataset, ks)
}

/// Aligned text table, one row per node in the given order, precisions in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.precision.keys().copied().collect())
        .unwrap_or_default();
    let width = reports
        .iter()
        .map(|r| r.name.len())
        .chain(std::iter::once("Segment".len()))
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Segment");
    for k in &ks {
        let _ = write!(out, "  {:>6}", format!("P@{k}"));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<width$}", r.name);
        for k in &ks {
            let p = r.precision.get(k).copied().unwrap_or(f64::NAN);
            let _ = write!(out, "  {:>6.1}", 100.0 * p);
        }
        out.push('\n');
    }
    out
}
