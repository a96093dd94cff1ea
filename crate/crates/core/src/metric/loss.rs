//! Batch losses over embeddings. Each returns the scalar loss and its exact
//! gradient with respect to every embedding row.

use serde::{Deserialize, Serialize};

use super::distance::{cosine_similarity, euclidean, pairwise_distances, snr_distance_grad, MetricKind, EPS};
use super::mining::{mine_triplets, MinerKind, Triplet};
use crate::error::{HemlError, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: DenseMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    /// `|d_ap - d_an + m|`
    Abs,
    /// `max(0, d_ap - d_an + m)`
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Triplet,
    Snr,
    Ntxent,
}

/// A loss that can drive training. Only triplet margin, SNR-contrastive and
/// NT-Xent ship; other objectives plug in through this trait.
pub trait MetricLoss: Send + Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, embeddings: &DenseMatrix<f64>, labels: &[i32]) -> Result<LossOutput>;
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `scale * d||a-b||/da` to row `a` and the negation to row `b`.
fn add_euclidean_grad(grad: &mut DenseMatrix<f64>, emb: &DenseMatrix<f64>, a: usize, b: usize, scale: f64) {
    let d = euclidean(emb.row(a), emb.row(b));
    if d <= EPS || scale == 0.0 {
        return;
    }
    for c in 0..emb.cols() {
        let g = scale * (emb.get(a, c) - emb.get(b, c)) / d;
        grad.set(a, c, grad.get(a, c) + g);
        grad.set(b, c, grad.get(b, c) - g);
    }
}

/// Mean triplet margin loss on euclidean distances. An empty triplet list
/// has loss 0.
pub fn triplet_margin_loss(
    embeddings: &DenseMatrix<f64>,
    triplets: &[Triplet],
    margin: f64,
    mode: MarginMode,
) -> Result<LossOutput> {
    if margin <= 0.0 {
        return Err(HemlError::Usage(format!("margin must be positive, got {margin}")));
    }
    let n = embeddings.rows();
    let mut grad = DenseMatrix::zeros(n, embeddings.cols());
    if triplets.is_empty() {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor >= n || t.positive >= n || t.negative >= n || t.anchor == t.positive)
    {
        return Err(HemlError::Usage(format!("invalid triplet {t:?} for batch of {n}")));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let d_ap = euclidean(embeddings.row(t.anchor), embeddings.row(t.positive));
        let d_an = euclidean(embeddings.row(t.anchor), embeddings.row(t.negative));
        let v = d_ap - d_an + margin;
        let (value, slope) = match mode {
            MarginMode::Abs => (v.abs(), sign(v)),
            MarginMode::Hinge => {
                if v > 0.0 {
                    (v, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        total += value;
        add_euclidean_grad(&mut grad, embeddings, t.anchor, t.positive, scale * slope);
        add_euclidean_grad(&mut grad, embeddings, t.anchor, t.negative, -scale * slope);
    }
    Ok(LossOutput {
        loss: total * scale,
        grad,
    })
}

/// Mean SNR distance over positive ordered pairs plus `negative_weight` times
/// the mean of `max(0, margin - d_snr)` over negative ordered pairs.
pub fn snr_contrastive_loss(
    embeddings: &DenseMatrix<f64>,
    labels: &[i32],
    margin: f64,
    negative_weight: f64,
) -> Result<LossOutput> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(HemlError::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if labels[i] == labels[j] {
                    n_pos += 1;
                } else {
                    n_neg += 1;
                }
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(HemlError::Data(format!(
            "SNR-contrastive loss needs positive and negative pairs (got {n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut grad = DenseMatrix::zeros(n, embeddings.cols());
    let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (d, gx, gy) = snr_distance_grad(embeddings.row(i), embeddings.row(j))?;
            let coef = if labels[i] == labels[j] {
                pos_sum += d;
                1.0 / n_pos as f64
            } else if d < margin {
                neg_sum += margin - d;
                -negative_weight / n_neg as f64
            } else {
                0.0
            };
            if coef == 0.0 {
                continue;
            }
            for c in 0..embeddings.cols() {
                grad.set(i, c, grad.get(i, c) + coef * gx[c]);
                grad.set(j, c, grad.get(j, c) + coef * gy[c]);
            }
        }
    }
    Ok(LossOutput {
        loss: pos_sum / n_pos as f64 + negative_weight * neg_sum / n_neg as f64,
        grad,
    })
}

/// Loss value only, from precomputed pair distances. Shares the pair
/// bookkeeping of [`snr_contrastive_loss`].
pub fn snr_contrastive_from_distances(
    positive: &[f64],
    negative: &[f64],
    margin: f64,
    negative_weight: f64,
) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(HemlError::Data("need positive and negative pairs".into()));
    }
    let pos = positive.iter().sum::<f64>() / positive.len() as f64;
    let neg = negative.iter().map(|d| (margin - d).max(0.0)).sum::<f64>() / negative.len() as f64;
    Ok(pos + negative_weight * neg)
}

/// NT-Xent over every anchor-positive pair using cosine similarity:
/// `-log(exp(s_ap/t) / sum_{k != a} exp(s_ak/t))`, averaged.
pub fn ntxent_loss(embeddings: &DenseMatrix<f64>, labels: &[i32], temperature: f64) -> Result<LossOutput> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(HemlError::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    if temperature <= 0.0 {
        return Err(HemlError::Usage(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut sim = DenseMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sim.set(i, j, cosine_similarity(embeddings.row(i), embeddings.row(j))?);
        }
    }
    // coefficient of dL/ds_ak, accumulated over pairs
    let mut coef = DenseMatrix::<f64>::zeros(n, n);
    let mut total = 0.0;
    let mut pairs = 0usize;
    let mut skipped = 0usize;
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != a && labels[p] == labels[a]).collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let logits: Vec<(usize, f64)> = (0..n)
            .filter(|&k| k != a)
            .map(|k| (k, sim.get(a, k) / temperature))
            .collect();
        let max = logits.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&(_, l)| (l - max).exp()).sum();
        let log_denom = max + denom.ln();
        for &p in &positives {
            total += log_denom - sim.get(a, p) / temperature;
            pairs += 1;
            coef.set(a, p, coef.get(a, p) - 1.0 / temperature);
            for &(k, l) in &logits {
                let soft = (l - log_denom).exp();
                coef.set(a, k, coef.get(a, k) + soft / temperature);
            }
        }
    }
    if skipped > 0 {
        log::warn!("NT-Xent skipped {skipped} anchors without a positive");
    }
    if pairs == 0 {
        return Err(HemlError::Data("NT-Xent: no anchor has a positive".into()));
    }
    let scale = 1.0 / pairs as f64;
    let mut grad = DenseMatrix::zeros(n, embeddings.cols());
    for a in 0..n {
        for k in 0..n {
            let c = coef.get(a, k) * scale;
            if c == 0.0 {
                continue;
            }
            // ds/dx_a = (xhat_k - s xhat_a)/|x_a|, symmetric for x_k
            let s = sim.get(a, k);
            for col in 0..embeddings.cols() {
                let xa = embeddings.get(a, col) / norms[a];
                let xk = embeddings.get(k, col) / norms[k];
                grad.set(a, col, grad.get(a, col) + c * (xk - s * xa) / norms[a]);
                grad.set(k, col, grad.get(k, col) + c * (xa - s * xk) / norms[k]);
            }
        }
    }
    Ok(LossOutput {
        loss: total * scale,
        grad,
    })
}

/// `d(x, y) - alpha * ln S(x, y)` with euclidean `d` and cosine `S`.
pub fn sem_guided_loss(x: &[f64], y: &[f64], alpha: f64) -> Result<f64> {
    let s = cosine_similarity(x, y)?;
    if s <= 0.0 {
        return Err(HemlError::Domain(format!(
            "semantic similarity {s} is not positive; log undefined"
        )));
    }
    Ok(euclidean(x, y) - alpha * s.ln())
}

#[derive(Debug, Clone)]
pub struct TripletMarginLoss {
    pub margin: f64,
    pub mode: MarginMode,
    pub miner: MinerKind,
}

impl MetricLoss for TripletMarginLoss {
    fn name(&self) -> &'static str {
        "triplet"
    }

    fn compute(&self, embeddings: &DenseMatrix<f64>, labels: &[i32]) -> Result<LossOutput> {
        let dmat = pairwise_distances(embeddings, MetricKind::Euclidean)?;
        let triplets = mine_triplets(&dmat, labels, self.miner, self.margin)?;
        triplet_margin_loss(embeddings, &triplets, self.margin, self.mode)
    }
}

#[derive(Debug, Clone)]
pub struct SnrContrastiveLoss {
    pub margin: f64,
    pub negative_weight: f64,
}

impl MetricLoss for SnrContrastiveLoss {
    fn name(&self) -> &'static str {
        "snr"
    }

    fn compute(&self, embeddings: &DenseMatrix<f64>, labels: &[i32]) -> Result<LossOutput> {
        snr_contrastive_loss(embeddings, labels, self.margin, self.negative_weight)
    }
}

#[derive(Debug, Clone)]
pub struct NtXentLoss {
    pub temperature: f64,
}

impl MetricLoss for NtXentLoss {
    fn name(&self) -> &'static str {
        "ntxent"
    }

    fn compute(&self, embeddings: &DenseMatrix<f64>, labels: &[i32]) -> Result<LossOutput> {
        ntxent_loss(embeddings, labels, self.temperature)
    }
}
