use serde::{Deserialize, Serialize};

use crate::error::{HemlError, Result};
use crate::numerics::DenseMatrix;

/// Guard for variances and norms.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Snr,
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(HemlError::Shape(format!(
            "embedding lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Population variance over the components of `v`.
pub fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n
}

/// `Var(x - y) / Var(x)` with `x` as the anchor. Not symmetric.
pub fn snr_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    if x.len() < 2 {
        return Err(HemlError::Shape(
            "SNR distance needs embeddings with at least 2 dimensions".into(),
        ));
    }
    let signal = population_variance(x);
    if signal <= EPS {
        return Err(HemlError::Degenerate(format!(
            "anchor embedding variance {signal:e} is below {EPS:e}"
        )));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(population_variance(&diff) / signal)
}

/// Gradient of [`snr_distance`] with respect to both arguments.
pub(crate) fn snr_distance_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = snr_distance(x, y)?;
    let n = x.len() as f64;
    let signal = population_variance(x);
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let diff_mean = diff.iter().sum::<f64>() / n;
    let x_mean = x.iter().sum::<f64>() / n;
    // d = A / B; dA/du = 2(u - mean u)/N, dB/dx = 2(x - mean x)/N
    let mut gx = Vec::with_capacity(x.len());
    let mut gy = Vec::with_capacity(x.len());
    for (u, xi) in diff.iter().zip(x) {
        let da = 2.0 * (u - diff_mean) / n;
        let db = 2.0 * (xi - x_mean) / n;
        gx.push(da / signal - d * db / signal);
        gy.push(-da / signal);
    }
    Ok((d, gx, gy))
}

/// Maps a non-negative distance into `[0, 1)` via `d / (1 + d)`.
pub fn normalize_distance(d: f64) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(HemlError::Usage(format!("cannot normalize negative distance {d}")));
    }
    if d.is_infinite() {
        return Err(HemlError::NonFinite("distance".into()));
    }
    // d / (1 + d) rounds to 1 for d beyond ~1e16; stay strictly below
    Ok((d / (1.0 + d)).min(1.0 - f64::EPSILON / 2.0))
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx <= EPS || ny <= EPS {
        return Err(HemlError::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// All-pairs distances between embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub metric: MetricKind,
    pub values: DenseMatrix<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

/// Entry `(i, j)` is `metric(row_i, row_j)` with row `i` as anchor.
pub fn pairwise_distances(embeddings: &DenseMatrix<f64>, metric: MetricKind) -> Result<DistanceMatrix> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(HemlError::Usage(format!(
            "pairwise distances need at least 2 rows, got {n}"
        )));
    }
    if metric == MetricKind::Snr {
        let degenerate: Vec<usize> = (0..n)
            .filter(|&i| population_variance(embeddings.row(i)) <= EPS)
            .collect();
        if !degenerate.is_empty() {
            return Err(HemlError::Degenerate(format!(
                "rows with near-zero variance cannot anchor SNR distance: {degenerate:?}"
            )));
        }
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = match metric {
                MetricKind::Euclidean => {
                    if j < i {
                        out.get(j, i)
                    } else {
                        euclidean(embeddings.row(i), embeddings.row(j))
                    }
                }
                MetricKind::Snr => snr_distance(embeddings.row(i), embeddings.row(j))?,
            };
            out.set(i, j, d);
        }
    }
    Ok(DistanceMatrix { metric, values: out })
}
