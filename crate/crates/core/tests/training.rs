//! End-to-end behaviour of bottom-up training and metric trees on
//! synthetic data with known structure.

use std::collections::BTreeMap;

use heml_core::data::{
    compose_datasets, encode_hseg, generate_synthetic, SegmentSample, SyntheticData, SyntheticMode, SyntheticSpec,
};
use heml_core::eval::{evaluate_node, precision_at_k};
use heml_core::hierarchy::{
    build_schedule, node_seed, train_on_data, train_segment, CheckpointStore, NodeData, TrainConfig,
};
use heml_core::metric::{MarginMode, MetricLoss, MinerKind, TripletMarginLoss};
use heml_core::numerics::{mlp_backward, mlp_forward, sgd_step_model, Architecture, DenseMatrix, EmbedderModel};
use heml_core::tree::{build_metric_tree, InferenceModel};
use heml_core::HemlError;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

fn synthetic(mode: SyntheticMode, n_segments: usize, n_per_class: usize, sigma: f64, seed: u64) -> SyntheticData {
    generate_synthetic(&SyntheticSpec {
        n_per_class,
        n_classes: 2,
        n_segments,
        input_dim: 8 * n_segments,
        noise_sigma: sigma,
        mode,
        seed,
        val_per_class: n_per_class / 2,
    })
    .unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        trunk_widths: vec![32, 16],
        embedder_hidden: 16,
        ..TrainConfig::default()
    }
}

fn train(data: &SyntheticData, config: &TrainConfig, jobs: usize) -> (NodeData, CheckpointStore) {
    let schedule = build_schedule(&data.manifest).unwrap();
    let nodes = NodeData::from_splits(&schedule, &data.splits, 0.0).unwrap();
    let store = train_on_data(&schedule, &nodes, config, data.manifest.content_hash(), jobs).unwrap();
    (nodes, store)
}

fn query(data: &SyntheticData, split: &str, row: usize) -> BTreeMap<String, SegmentSample> {
    data.splits[split]
        .iter()
        .map(|(name, ds)| (name.clone(), ds.sample(row)))
        .collect()
}

#[test]
fn two_hundred_sgd_steps_shrink_triplet_loss() {
    // two well separated clusters in the plane
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..16 {
        let t = i as f64 / 16.0;
        let class = i % 2;
        let cx = if class == 0 { -1.0 } else { 1.0 };
        rows.push([cx + 0.3 * (6.0 * t).sin(), 0.3 * (11.0 * t).cos()]);
        labels.push(class);
    }
    let x = DenseMatrix::from_rows(&rows).unwrap();
    let arch = Architecture {
        input_dim: 2,
        trunk_widths: vec![16],
        embedder_hidden: 16,
        embed_dim: 4,
    };
    let mut model = EmbedderModel::seeded(&arch, 1).unwrap();
    let loss = TripletMarginLoss {
        // abs mode only reaches zero when d_an - d_ap hits the margin exactly
        margin: 0.1,
        mode: MarginMode::Hinge,
        miner: MinerKind::SemiHard,
    };
    let value = |m: &EmbedderModel| loss.compute(&mlp_forward(m, &x).unwrap().0, &labels).unwrap().loss;
    let initial = value(&model);
    for _ in 0..200 {
        let (emb, cache) = mlp_forward(&model, &x).unwrap();
        let out = loss.compute(&emb, &labels).unwrap();
        let (grads, _) = mlp_backward(&model, &cache, &out.grad).unwrap();
        model = sgd_step_model(&model, &grads, 0.05).unwrap();
    }
    let last = value(&model);
    assert!(last < 0.1 * initial, "loss {initial} -> {last}");
}

#[test]
fn combined_node_is_at_least_as_good_as_its_leaves() {
    let data = synthetic(SyntheticMode::Prototype, 2, 100, 0.8, 3);
    let (nodes, store) = train(&data, &small_config(40), 1);
    assert_eq!(store.checkpoints.len(), 3);
    assert!(store.is_complete());
    let p1: Vec<f64> = (0..3)
        .map(|id| {
            evaluate_node(&store.checkpoints[&id], &nodes.val[&id], &[1])
                .unwrap()
                .precision[&1]
        })
        .collect();
    assert!(
        p1[2] >= p1[0] && p1[2] >= p1[1],
        "P@1 leaves {:?} root {}",
        &p1[..2],
        p1[2]
    );
}

#[test]
fn parallel_training_matches_sequential_bitwise() {
    let data = synthetic(SyntheticMode::Prototype, 4, 20, 0.3, 5);
    let config = small_config(3);
    let (_, one) = train(&data, &config, 1);
    let (_, four) = train(&data, &config, 4);
    assert_eq!(one.checkpoints.len(), 7);
    for (id, ckpt) in &one.checkpoints {
        assert_eq!(
            ckpt.encode().unwrap(),
            four.checkpoints[id].encode().unwrap(),
            "node {id}"
        );
    }
}

#[test]
fn nodes_get_distinct_reproducible_seeds() {
    let seeds: Vec<u64> = (0..31).map(|id| node_seed(42, id)).collect();
    let mut unique = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), 31);
    assert_eq!(seeds, (0..31).map(|id| node_seed(42, id)).collect::<Vec<_>>());
    assert_ne!(node_seed(42, 0), node_seed(43, 0));
}

#[test]
fn leaf_checkpoints_are_untouched_by_parent_training() {
    let data = synthetic(SyntheticMode::Prototype, 2, 20, 0.3, 8);
    let config = small_config(4);
    let (nodes, store) = train(&data, &config, 1);
    for leaf in 0..2 {
        let mut leaf_config = config.clone();
        leaf_config.seed = node_seed(config.seed, leaf);
        let alone = train_segment(leaf, &nodes.train[&leaf], nodes.val.get(&leaf), &leaf_config, None).unwrap();
        assert_eq!(alone.model, store.checkpoints[&leaf].model);
        assert_eq!(alone.history, store.checkpoints[&leaf].history);
    }
    let root = &store.checkpoints[&2];
    assert_eq!(root.history.len(), config.epochs);
}

#[test]
fn internal_node_data_is_the_composition_of_its_children() {
    let data = synthetic(SyntheticMode::Xor, 4, 10, 0.1, 9);
    let schedule = build_schedule(&data.manifest).unwrap();
    let nodes = NodeData::from_splits(&schedule, &data.splits, 0.0).unwrap();
    let digest = |ds: &heml_core::data::Dataset| hex::encode(Sha256::digest(encode_hseg(ds)));
    let train = &data.splits["train"];
    let expected = compose_datasets(&[&train["seg0"], &train["seg1"]], 0.0).unwrap().value;
    assert_eq!(digest(&nodes.train[&4]), digest(&expected));
    let all: Vec<_> = ["seg0", "seg1", "seg2", "seg3"].iter().map(|s| &train[*s]).collect();
    let expected_root = compose_datasets(&all, 0.0).unwrap().value;
    assert_eq!(nodes.train[&6].segment_id, "seg0+seg1+seg2+seg3");
    assert_eq!(digest(&nodes.train[&6]), digest(&expected_root));
}

#[test]
fn divergence_aborts_with_the_node_id() {
    let data = synthetic(SyntheticMode::Prototype, 2, 20, 0.3, 10);
    let config = TrainConfig {
        learning_rate: 1e12,
        ..small_config(5)
    };
    let schedule = build_schedule(&data.manifest).unwrap();
    let nodes = NodeData::from_splits(&schedule, &data.splits, 0.0).unwrap();
    match train_on_data(&schedule, &nodes, &config, String::new(), 1) {
        Err(HemlError::Training { node_id, .. }) => assert!(node_id < 2),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn metric_trees_on_a_trained_store() {
    let data = synthetic(SyntheticMode::Xor, 2, 100, 0.05, 12);
    let (nodes, store) = train(&data, &small_config(30), 1);
    let root = store.schedule.root;
    let root_p1 = precision_at_k(
        &heml_core::numerics::embed_batch(&store.checkpoints[&root].model, &nodes.val[&root].features).unwrap(),
        &nodes.val[&root].labels,
        1,
    )
    .unwrap();
    assert!(root_p1 >= 0.9, "root P@1 {root_p1}");

    // self comparison
    let a = query(&data, "val", 0);
    let tree = build_metric_tree(&store, &a, &a, 0.0).unwrap();
    assert_eq!(tree.nodes.len(), store.schedule.len());
    for (t, s) in tree.nodes.iter().zip(&store.schedule.nodes) {
        assert_eq!((t.id, &t.name, &t.children), (s.id, &s.name, &s.children));
        assert_eq!(t.raw, 0.0);
        assert_eq!(t.decision, 1.0);
    }
    assert_eq!(tree.z, 2.0);

    // symmetry and ranges
    let b = query(&data, "val", 1);
    let ab = build_metric_tree(&store, &a, &b, 0.0).unwrap();
    let ba = build_metric_tree(&store, &b, &a, 0.0).unwrap();
    for (x, y) in ab.nodes.iter().zip(&ba.nodes) {
        assert_eq!(x.raw, y.raw);
        assert!((0.0..1.0).contains(&x.normalized));
        assert!(x.decision > 0.0 && x.decision <= 1.0);
    }
    assert!(ab.z > 0.0 && ab.z <= 2.0);

    // cross-class pairs sit further apart at the root than same-class pairs
    let labels = &nodes.val[&root].labels;
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    let mut rng = StdRng::seed_from_u64(7);
    while same.len() < 20 || cross.len() < 20 {
        let (p, q) = (rng.random_range(0..labels.len()), rng.random_range(0..labels.len()));
        if p == q {
            continue;
        }
        let t = build_metric_tree(&store, &query(&data, "val", p), &query(&data, "val", q), 0.0).unwrap();
        let d = t.root_node().normalized;
        if labels[p] == labels[q] {
            if same.len() < 20 {
                same.push(d);
            }
        } else if cross.len() < 20 {
            cross.push(d);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&cross) > mean(&same),
        "cross {} vs same {}",
        mean(&cross),
        mean(&same)
    );

    // missing leaves are reported by id
    let mut partial = a.clone();
    partial.remove("seg1");
    match build_metric_tree(&store, &partial, &a, 0.0) {
        Err(e @ HemlError::Usage(_)) => assert!(e.to_string().contains("seg1"), "{e}"),
        other => panic!("expected usage error, got {other:?}"),
    }

    // inference checks segment identity and embedding width
    let inference = InferenceModel::from_checkpoint(&store.checkpoints[&0]).unwrap();
    let seg0 = a["seg0"].clone();
    assert_eq!(inference.embed(&seg0).unwrap(), inference.embed(&seg0).unwrap());
    assert_eq!(inference.embed(&seg0).unwrap().len(), 8);
    assert!(inference.embed(&a["seg1"]).unwrap_err().is_usage());
}

#[test]
fn stores_round_trip_through_disk() {
    let data = synthetic(SyntheticMode::Prototype, 3, 10, 0.3, 13);
    let (_, store) = train(&data, &small_config(2), 1);
    let dir = tempfile::tempdir().unwrap();
    let files = store.save(dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    let back = CheckpointStore::load(dir.path()).unwrap();
    assert_eq!(back.checkpoints, store.checkpoints);
    assert_eq!(back.manifest_hash, store.manifest_hash);

    std::fs::remove_file(dir.path().join(heml_core::hierarchy::checkpoint_file_name(3))).unwrap();
    assert!(CheckpointStore::load(dir.path()).is_err());
}
