//! Property tests over randomly generated inputs.

mod support;

use heml_core::data::{compose_segments, decode_hseg, encode_hseg, Dataset, SegmentSample};
use heml_core::eval::precision_at_ks;
use heml_core::metric::{
    cosine_similarity, normalize_distance, pairwise_distances, snr_distance, MarginMode, MetricKind, MetricLoss,
    MinerKind, NtXentLoss, SnrContrastiveLoss, TripletMarginLoss,
};
use heml_core::numerics::{average_params, Architecture, DenseMatrix, EmbedderModel, MlpParams};
use proptest::prelude::*;

const DIM: usize = 6;

/// Parts over a shared canvas with arbitrary, possibly overlapping masks.
fn part(id: &'static str, label: i32) -> impl Strategy<Value = SegmentSample> {
    (
        prop::collection::vec(-5.0f32..5.0, DIM),
        prop::collection::vec(any::<bool>(), DIM),
    )
        .prop_map(move |(f, m)| SegmentSample {
            segment_id: id.into(),
            features: f.iter().zip(&m).map(|(&v, &on)| if on { v } else { 0.0 }).collect(),
            mask: m,
            label,
        })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..12, 1usize..8).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * dim),
            prop::collection::vec(any::<bool>(), n * dim),
            prop::collection::vec(any::<i32>(), n),
        )
            .prop_map(move |(f, m, l)| Dataset::new("seg", DenseMatrix::new(n, dim, f).unwrap(), m, l).unwrap())
    })
}

fn points(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 3..max_rows)
}

fn matrix(rows: &[Vec<f64>]) -> DenseMatrix<f64> {
    DenseMatrix::from_rows(rows).unwrap()
}

fn scale_params(p: &MlpParams, c: f32) -> MlpParams {
    let mut out = p.clone();
    for l in &mut out.layers {
        for v in l.weight.values_mut() {
            *v *= c;
        }
        for b in &mut l.bias {
            *b *= c;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_associative(a in part("a", 3), b in part("b", 3), c in part("c", 3)) {
        let ab = compose_segments(&[a.clone(), b.clone()], 0.0).unwrap().value;
        let left = compose_segments(&[ab, c.clone()], 0.0).unwrap().value;
        let bc = compose_segments(&[b, c], 0.0).unwrap().value;
        let right = compose_segments(&[a, bc], 0.0).unwrap().value;
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(left.segment_id.as_str(), "a+b+c");
        left.validate(0.0).unwrap();
    }

    #[test]
    fn hseg_round_trip_is_exact(ds in dataset_strategy()) {
        let bytes = encode_hseg(&ds);
        let back = decode_hseg(&bytes, "seg").unwrap();
        prop_assert_eq!(encode_hseg(&back), bytes);
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.masks, ds.masks);
        let same_bits = back.features.values().iter().zip(ds.features.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        prop_assert!(same_bits);
    }

    #[test]
    fn hseg_rejects_any_truncation(ds in dataset_strategy(), cut in 1usize..64) {
        let bytes = encode_hseg(&ds);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_hseg(&bytes[..keep], "seg").is_err());
    }

    #[test]
    fn averaging_is_commutative_idempotent_and_linear(s1 in any::<u64>(), s2 in any::<u64>(), k in -3i32..4) {
        let arch = Architecture { input_dim: 5, trunk_widths: vec![7], embedder_hidden: 4, embed_dim: 3 };
        let a = EmbedderModel::seeded(&arch, s1).unwrap().trunk;
        let b = EmbedderModel::seeded(&arch, s2).unwrap().trunk;
        prop_assert_eq!(average_params(&a, &b).unwrap(), average_params(&b, &a).unwrap());
        prop_assert_eq!(average_params(&a, &a).unwrap(), a.clone());
        // powers of two scale exactly in binary floating point
        let c = 2f32.powi(k);
        let lhs = average_params(&scale_params(&a, c), &scale_params(&b, c)).unwrap();
        let rhs = scale_params(&average_params(&a, &b).unwrap(), c);
        prop_assert_eq!(lhs, rhs);
        // arbitrary factors agree to rounding
        let c = 0.3f32;
        let lhs = average_params(&scale_params(&a, c), &scale_params(&b, c)).unwrap().flat_values();
        let rhs = scale_params(&average_params(&a, &b).unwrap(), c).flat_values();
        let (fa, fb) = (a.flat_values(), b.flat_values());
        for i in 0..lhs.len() {
            // f32 rounding relative to the operands, which may nearly cancel
            let scale = c * (fa[i].abs() + fb[i].abs());
            prop_assert!((lhs[i] - rhs[i]).abs() <= 1e-6 * scale.max(1e-30));
        }
    }

    #[test]
    fn snr_is_zero_on_self_and_non_negative(x in prop::collection::vec(-3.0f64..3.0, 2..16), y in prop::collection::vec(-3.0f64..3.0, 16)) {
        let y = &y[..x.len()];
        prop_assume!(heml_core::metric::population_variance(&x) > 1e-6);
        prop_assert!(snr_distance(&x, &x).unwrap().abs() <= 1e-12);
        prop_assert!(snr_distance(&x, y).unwrap() >= 0.0);
    }

    #[test]
    fn normalization_is_bounded_and_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let (na, nb) = (normalize_distance(a).unwrap(), normalize_distance(b).unwrap());
        prop_assert!((0.0..1.0).contains(&na));
        if a < b {
            prop_assert!(na < nb || (b - a) / b < 1e-12);
        }
    }

    #[test]
    fn cosine_is_bounded(x in prop::collection::vec(-3.0f64..3.0, 4), y in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3) && y.iter().any(|v| v.abs() > 1e-3));
        prop_assert!(cosine_similarity(&x, &y).unwrap().abs() <= 1.0);
        prop_assert!((cosine_similarity(&x, &x).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn euclidean_matrix_is_a_metric(pts in points(10, 4)) {
        let m = pairwise_distances(&matrix(&pts), MetricKind::Euclidean).unwrap();
        let n = pts.len();
        for i in 0..n {
            prop_assert_eq!(m.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(m.get(i, j) >= 0.0);
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                for k in 0..n {
                    prop_assert!(m.get(i, k) <= m.get(i, j) + m.get(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn precision_is_invariant_under_rigid_motion(
        grid in prop::collection::vec(prop::collection::vec(-32i32..32, 3), 9..40),
        labels in prop::collection::vec(0i32..3, 40),
        shift in prop::collection::vec(-16i32..16, 3),
        perm in Just([2usize, 0, 1]).prop_shuffle(),
        flips in prop::collection::vec(any::<bool>(), 3),
    ) {
        // dyadic coordinates, a signed axis permutation and an integer shift
        // keep every distance exactly representable, so ties survive
        let pts: Vec<Vec<f64>> = grid.iter().map(|r| r.iter().map(|&v| v as f64 / 8.0).collect()).collect();
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| (0..3).map(|c| {
                let v = p[perm[c]];
                (if flips[c] { -v } else { v }) + shift[c] as f64
            }).collect())
            .collect();
        let labels = &labels[..pts.len()];
        let before = precision_at_ks(&matrix(&pts), labels, &[1, 2, 8]).unwrap();
        let after = precision_at_ks(&matrix(&moved), labels, &[1, 2, 8]).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn losses_ignore_batch_order(pts in points(9, 5), seed in any::<u64>()) {
        let n = pts.len();
        let labels: Vec<i32> = (0..n as i32).map(|i| i % 2).collect();
        prop_assume!(pts.iter().all(|p| heml_core::metric::population_variance(p) > 1e-3));
        prop_assume!(pts.iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = heml_core::rng::splitmix64_finalize(state.wrapping_add(i as u64));
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let shuffled_labels: Vec<i32> = order.iter().map(|&i| labels[i]).collect();
        let losses: Vec<Box<dyn MetricLoss>> = vec![
            Box::new(TripletMarginLoss { margin: 0.1, mode: MarginMode::Abs, miner: MinerKind::SemiHard }),
            Box::new(TripletMarginLoss { margin: 0.1, mode: MarginMode::Hinge, miner: MinerKind::All }),
            Box::new(SnrContrastiveLoss { margin: 1.0, negative_weight: 1.0 }),
            Box::new(NtXentLoss { temperature: 0.1 }),
        ];
        for loss in &losses {
            let a = loss.compute(&matrix(&pts), &labels).unwrap();
            let b = loss.compute(&matrix(&shuffled), &shuffled_labels).unwrap();
            prop_assert!(a.loss >= 0.0);
            prop_assert!((a.loss - b.loss).abs() <= 1e-9 * a.loss.abs().max(1.0), "{}: {} vs {}", loss.name(), a.loss, b.loss);
            for (new_row, &old_row) in order.iter().enumerate() {
                for c in 0..5 {
                    let (ga, gb) = (a.grad.get(old_row, c), b.grad.get(new_row, c));
                    prop_assert!((ga - gb).abs() <= 1e-9 * ga.abs().max(1.0), "{} grad", loss.name());
                }
            }
        }
    }
}
