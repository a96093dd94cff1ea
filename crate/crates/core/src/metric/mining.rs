use serde::{Deserialize, Serialize};

use super::distance::DistanceMatrix;
use crate::error::{HemlError, Result};

/// Indices into a batch: `label(anchor) == label(positive) != label(negative)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }

    pub fn is_valid(&self, labels: &[i32]) -> bool {
        self.anchor != self.positive
            && labels[self.anchor] == labels[self.positive]
            && labels[self.anchor] != labels[self.negative]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinerKind {
    /// Every valid triplet.
    All,
    /// Per anchor-positive pair, the closest negative inside
    /// `(d_ap, d_ap + margin)`, falling back to the hardest negative.
    SemiHard,
}

/// Ordered by anchor, then positive, then negative.
pub fn mine_triplets(dmat: &DistanceMatrix, labels: &[i32], strategy: MinerKind, margin: f64) -> Result<Vec<Triplet>> {
    let n = labels.len();
    if dmat.len() != n {
        return Err(HemlError::Shape(format!(
            "distance matrix is {}x{} but {} labels were given",
            dmat.len(),
            dmat.len(),
            n
        )));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        log::warn!("triplet mining on a single-class batch yields no triplets");
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let negatives = (0..n).filter(|&k| labels[k] != labels[a]);
            match strategy {
                MinerKind::All => out.extend(negatives.map(|k| Triplet::new(a, p, k))),
                MinerKind::SemiHard => {
                    let d_ap = dmat.get(a, p);
                    let mut in_window: Option<(f64, usize)> = None;
                    let mut hardest: Option<(f64, usize)> = None;
                    for k in negatives {
                        let d_an = dmat.get(a, k);
                        // strict `<` keeps the smallest index on ties
                        if hardest.is_none_or(|(best, _)| d_an < best) {
                            hardest = Some((d_an, k));
                        }
                        let inside = d_an > d_ap && d_an < d_ap + margin;
                        if inside && in_window.is_none_or(|(best, _)| d_an < best) {
                            in_window = Some((d_an, k));
                        }
                    }
                    if let Some((_, k)) = in_window.or(hardest) {
                        out.push(Triplet::new(a, p, k));
                    }
                }
            }
        }
    }
    Ok(out)
}
