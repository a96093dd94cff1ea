//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except for plain data types.

#![allow(dead_code)]

pub mod fd;

use std::collections::BTreeSet;

use heml_core::numerics::{Activation, DenseMatrix, EmbedderModel};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Relative error with an absolute floor so that exact zeros compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize, scale: f64) -> DenseMatrix<f64> {
    let v = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseMatrix::new(rows, cols, v).unwrap()
}

pub fn rows_of(m: &DenseMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Every `(a, p, n)` with `a != p`, same label for `a, p`, different for `n`.
pub fn brute_all_triplets(labels: &[i32]) -> BTreeSet<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in 0..n {
            for k in 0..n {
                if a != p && labels[a] == labels[p] && labels[a] != labels[k] {
                    out.insert((a, p, k));
                }
            }
        }
    }
    out
}

/// Scans negatives in index order: the first strict minimum inside the
/// window `(d_ap, d_ap + m)`, else the first strict minimum overall.
pub fn brute_semihard(d: &dyn Fn(usize, usize) -> f64, labels: &[i32], m: f64) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            let negs: Vec<usize> = (0..n).filter(|&k| labels[k] != labels[a]).collect();
            if negs.is_empty() {
                continue;
            }
            let d_ap = d(a, p);
            let window: Vec<usize> = negs
                .iter()
                .copied()
                .filter(|&k| d(a, k) > d_ap && d(a, k) < d_ap + m)
                .collect();
            let pool = if window.is_empty() { &negs } else { &window };
            let mut best = pool[0];
            for &k in pool {
                if d(a, k) < d(a, best) {
                    best = k;
                }
            }
            out.push((a, p, best));
        }
    }
    out
}

/// Fully sorts every query's neighbours by (distance, index).
pub fn brute_precision_at_k(points: &[Vec<f64>], labels: &[i32], k: usize) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for q in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (dist(&points[q], &points[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let hits = others[..k].iter().filter(|(_, j)| labels[*j] == labels[q]).count();
        total += hits as f64 / k as f64;
    }
    total / n as f64
}

/// Leave-one-out 1-NN accuracy.
pub fn one_nn_accuracy(points: &[Vec<f64>], labels: &[i32]) -> f64 {
    brute_precision_at_k(points, labels, 1)
}

/// Node count of the automatic schedule by level-by-level simulation.
pub fn schedule_node_count(leaves: usize) -> usize {
    let mut total = leaves;
    let mut width = leaves;
    while width > 1 {
        let pairs = width / 2;
        total += pairs;
        width = pairs + width % 2;
    }
    total
}

/// A layer as plain `f64` values: row-major weight `[out][in]`, bias, ReLU flag.
#[derive(Debug, Clone)]
pub struct RefLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub relu: bool,
}

pub fn ref_layers(model: &EmbedderModel) -> Vec<RefLayer> {
    model
        .trunk
        .layers
        .iter()
        .chain(&model.embedder.layers)
        .map(|l| RefLayer {
            weight: (0..l.weight.rows())
                .map(|r| l.weight.row(r).iter().map(|&w| w as f64).collect())
                .collect(),
            bias: l.bias.iter().map(|&b| b as f64).collect(),
            relu: l.activation == Activation::Relu,
        })
        .collect()
}

/// Reference forward pass. Also returns the smallest |pre-activation| at a
/// ReLU unit, used to keep finite differences away from kinks.
pub fn ref_forward(layers: &[RefLayer], x: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut closest_kink = f64::INFINITY;
    let out = x
        .iter()
        .map(|row| {
            let mut h = row.clone();
            for l in layers {
                h = l
                    .weight
                    .iter()
                    .zip(&l.bias)
                    .map(|(w, b)| {
                        let z = b + w.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>();
                        if l.relu {
                            closest_kink = closest_kink.min(z.abs());
                            z.max(0.0)
                        } else {
                            z
                        }
                    })
                    .collect();
            }
            h
        })
        .collect();
    (out, closest_kink)
}

/// Which ReLU units are active, row by row.
pub fn ref_pattern(layers: &[RefLayer], x: &[Vec<f64>]) -> Vec<bool> {
    let mut pattern = Vec::new();
    for row in x {
        let mut h = row.clone();
        for l in layers {
            h = l
                .weight
                .iter()
                .zip(&l.bias)
                .map(|(w, b)| {
                    let z = b + w.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>();
                    if l.relu {
                        pattern.push(z > 0.0);
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
        }
    }
    pattern
}

/// Mutable access to every parameter in the order of `flat_values`.
pub fn ref_param_mut(layers: &mut [RefLayer], mut index: usize) -> &mut f64 {
    for l in layers.iter_mut() {
        let w = l.weight.len() * l.weight[0].len();
        if index < w {
            let cols = l.weight[0].len();
            return &mut l.weight[index / cols][index % cols];
        }
        index -= w;
        if index < l.bias.len() {
            return &mut l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range");
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DenseMatrix<f64> {
    DenseMatrix::from_rows(rows).unwrap()
}
