//! Loss-level finite-difference checks shared by the gradient tests and the
//! acceptance suite.

use heml_core::metric::{
    ntxent_loss, snr_contrastive_loss, triplet_margin_loss, MarginMode, MetricLoss, MinerKind, NtXentLoss,
    SnrContrastiveLoss, Triplet, TripletMarginLoss,
};

use super::*;

pub const TOL: f64 = 1e-4;
pub const MARGIN: f64 = 0.1;
pub const SNR_MARGIN: f64 = 2.0;
pub const TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    TripletAbs,
    TripletHinge,
    Snr,
    NtXent,
}

pub const KINDS: [Kind; 4] = [Kind::TripletAbs, Kind::TripletHinge, Kind::Snr, Kind::NtXent];

pub fn loss_impl(kind: Kind) -> Box<dyn MetricLoss> {
    match kind {
        Kind::TripletAbs => Box::new(TripletMarginLoss {
            margin: MARGIN,
            mode: MarginMode::Abs,
            miner: MinerKind::SemiHard,
        }),
        Kind::TripletHinge => Box::new(TripletMarginLoss {
            margin: MARGIN,
            mode: MarginMode::Hinge,
            miner: MinerKind::All,
        }),
        Kind::Snr => Box::new(SnrContrastiveLoss {
            margin: SNR_MARGIN,
            negative_weight: 0.7,
        }),
        Kind::NtXent => Box::new(NtXentLoss {
            temperature: TEMPERATURE,
        }),
    }
}

/// Mining is a selection step; the analytic gradient treats the selected
/// triplets as constant, so finite differences reuse the same triplets.
pub fn mined(kind: Kind, emb: &[Vec<f64>], labels: &[i32]) -> Vec<Triplet> {
    let d = |i: usize, j: usize| dist(&emb[i], &emb[j]);
    let raw: Vec<(usize, usize, usize)> = match kind {
        Kind::TripletAbs => brute_semihard(&d, labels, MARGIN),
        _ => brute_all_triplets(labels).into_iter().collect(),
    };
    raw.into_iter().map(|(a, p, n)| Triplet::new(a, p, n)).collect()
}

pub fn loss_value(kind: Kind, emb: &[Vec<f64>], labels: &[i32], triplets: &[Triplet]) -> f64 {
    let m = to_matrix(emb);
    match kind {
        Kind::TripletAbs => triplet_margin_loss(&m, triplets, MARGIN, MarginMode::Abs).unwrap().loss,
        Kind::TripletHinge => {
            triplet_margin_loss(&m, triplets, MARGIN, MarginMode::Hinge)
                .unwrap()
                .loss
        }
        Kind::Snr => snr_contrastive_loss(&m, labels, SNR_MARGIN, 0.7).unwrap().loss,
        Kind::NtXent => ntxent_loss(&m, labels, TEMPERATURE).unwrap().loss,
    }
}

pub fn snr(x: &[f64], y: &[f64]) -> f64 {
    let var = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / v.len() as f64
    };
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    var(&diff) / var(x)
}

/// Distance from the nearest non-differentiable point of the loss.
pub fn kink_clearance(kind: Kind, emb: &[Vec<f64>], labels: &[i32], triplets: &[Triplet]) -> f64 {
    let mut clear = f64::INFINITY;
    for i in 0..emb.len() {
        for j in 0..emb.len() {
            if i != j {
                clear = clear.min(dist(&emb[i], &emb[j]));
            }
        }
    }
    match kind {
        Kind::TripletAbs | Kind::TripletHinge => {
            for t in triplets {
                let v = dist(&emb[t.anchor], &emb[t.positive]) - dist(&emb[t.anchor], &emb[t.negative]) + MARGIN;
                clear = clear.min(v.abs());
            }
        }
        Kind::Snr => {
            for i in 0..emb.len() {
                for j in 0..emb.len() {
                    if i != j && labels[i] != labels[j] {
                        clear = clear.min((SNR_MARGIN - snr(&emb[i], &emb[j])).abs());
                    }
                }
            }
        }
        Kind::NtXent => {}
    }
    clear
}

pub fn labels_for(n: usize, classes: i32) -> Vec<i32> {
    (0..n as i32).map(|i| i % classes).collect()
}

/// Checks `instances` random embedding sets away from kinks; returns the
/// worst relative error seen.
pub fn loss_fd_check(kind: Kind, instances: usize, h: f64) -> std::result::Result<f64, String> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut seed = 0;
    while checked < instances {
        seed += 1;
        if seed >= 200 {
            return Err(format!("{kind:?}: could not find instances away from kinks"));
        }
        let mut r = rng(seed);
        let dim = 3 + (seed as usize % 14);
        let n = 6 + (seed as usize % 4);
        let labels = labels_for(n, 2 + (seed as i32 % 2));
        let emb = rows_of(&random_matrix(&mut r, n, dim, 1.0));
        let triplets = mined(kind, &emb, &labels);
        if kink_clearance(kind, &emb, &labels, &triplets) < 1e-3 {
            continue;
        }
        let analytic = loss_impl(kind)
            .compute(&to_matrix(&emb), &labels)
            .map_err(|e| e.to_string())?;
        let direct = loss_value(kind, &emb, &labels, &triplets);
        if (analytic.loss - direct).abs() >= 1e-12 || analytic.loss < 0.0 {
            return Err(format!(
                "{kind:?} seed {seed}: loss {} vs recomputed {direct}",
                analytic.loss
            ));
        }
        for i in 0..n {
            for c in 0..dim {
                let mut plus = emb.clone();
                plus[i][c] += h;
                let mut minus = emb.clone();
                minus[i][c] -= h;
                let fd = (loss_value(kind, &plus, &labels, &triplets) - loss_value(kind, &minus, &labels, &triplets))
                    / (2.0 * h);
                let g = analytic.grad.get(i, c);
                let e = rel_err(g, fd);
                if e > TOL {
                    return Err(format!("{kind:?} seed {seed} [{i},{c}]: analytic {g} vs fd {fd}"));
                }
                worst = worst.max(e);
            }
        }
        checked += 1;
    }
    Ok(worst)
}
