use convpred::bidsim::{PolicySpec, Scenario};
use convpred::bucket::{edge_probabilities, infer_yf, EdgePair};
use convpred::checkpoint::Checkpoint;
use convpred::experiment::{evaluate_model, predict_samples, train_variant};
use convpred::model::{ModelConfig, Variant};
use convpred::synth::{generate_campaigns, read_dataset, split_dataset, write_dataset, GeneratorConfig};
use convpred::train::TrainConfig;
use convpred::tree::{hard_labels, soft_labels, BucketTree, LeafValue, SmoothingKernel};
use proptest::prelude::*;

fn path_edges(tree: &BucketTree, y: f64) -> Vec<EdgePair> {
    let mut edges = vec![[0.5, 0.5]; tree.internal().len()];
    for label in hard_labels(tree, y).entries {
        let slot = tree.internal_slot(label.node).unwrap();
        edges[slot] = [label.left, label.right];
    }
    edges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_edges_select_the_containing_leaf(
        labels in prop::collection::vec(0u64..5000, 50..400),
        leaves in 2usize..32,
        probe in 0usize..400,
    ) {
        let tree = BucketTree::build(&labels, leaves, LeafValue::DistinctMean).unwrap();
        let y = labels[probe % labels.len()] as f64;
        let pred = infer_yf(&tree, &path_edges(&tree, y));
        let expected = tree.leaf_expectation(tree.leaf_for(y));
        prop_assert_eq!(pred.y_f, expected);
        let total: f64 = pred.leaf_weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_labels_keep_the_containing_side_at_one(
        labels in prop::collection::vec(0u64..5000, 50..400),
        leaves in 2usize..32,
        y in 0u64..6000,
    ) {
        let tree = BucketTree::build(&labels, leaves, LeafValue::DistinctMean).unwrap();
        let kernel = SmoothingKernel::new(1e-6, 10.0).unwrap();
        let soft = soft_labels(&tree, y as f64, &kernel);
        let hard = hard_labels(&tree, y as f64);
        prop_assert_eq!(soft.entries.len(), hard.entries.len());
        for (s, h) in soft.entries.iter().zip(&hard.entries) {
            prop_assert_eq!(s.node, h.node);
            if h.left == 1.0 { prop_assert_eq!(s.left, 1.0); }
            if h.right == 1.0 { prop_assert_eq!(s.right, 1.0); }
            prop_assert!((0.0..=1.0).contains(&s.left) && (0.0..=1.0).contains(&s.right));
        }
    }

    #[test]
    fn leaf_weights_form_a_distribution(
        labels in prop::collection::vec(0u64..5000, 50..200),
        logits in prop::collection::vec(-8.0f64..8.0, 64),
    ) {
        let tree = BucketTree::build(&labels, 16, LeafValue::DistinctMean).unwrap();
        let n = 2 * tree.internal().len();
        let pred = infer_yf(&tree, &edge_probabilities(&logits[..n]));
        let total: f64 = pred.leaf_weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let lo = tree.leaves().iter().map(|&l| tree.leaf_expectation(l)).fold(f64::INFINITY, f64::min);
        let hi = tree.leaves().iter().map(|&l| tree.leaf_expectation(l)).fold(0.0, f64::max);
        prop_assert!(pred.y_f >= lo - 1e-9 && pred.y_f <= hi + 1e-9);
    }
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let data = generate_campaigns(&GeneratorConfig {
        n_samples: 500,
        ..Default::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
}

#[test]
fn trained_model_survives_checkpoint_and_respects_tracked_floor() {
    let data = generate_campaigns(&GeneratorConfig {
        n_samples: 3000,
        ..Default::default()
    })
    .unwrap();
    let split = split_dataset(&data, 5).unwrap();
    let mc = ModelConfig {
        num_leaves: 8,
        ..Default::default()
    };
    let tc = TrainConfig {
        max_epochs: 2,
        seed: 5,
        ..Default::default()
    };
    let run = train_variant(&split, &mc, &tc).unwrap();
    let ck = Checkpoint::new(&run.model, &tc, Some(run.outcome.adam.clone()), Some(run.outcome.best_val_mape));
    let restored = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap().model().unwrap();

    let before = predict_samples(&run.model, &split.test).unwrap();
    let after = predict_samples(&restored, &split.test).unwrap();
    assert_eq!(before, after);
    for (p, s) in after.iter().zip(&split.test) {
        assert!(p.y_final >= s.tracked_conversions as f64);
        let lambda = p.lambda.unwrap();
        assert!((0.0..=1.0).contains(&lambda));
    }
    let val = evaluate_model(&restored, &split.val).unwrap();
    assert_eq!(val.mape, run.outcome.best_val_mape);
}

#[test]
fn value_regression_baselines_train_end_to_end() {
    let data = generate_campaigns(&GeneratorConfig {
        n_samples: 2000,
        ..Default::default()
    })
    .unwrap();
    let split = split_dataset(&data, 2).unwrap();
    let tc = TrainConfig {
        max_epochs: 1,
        ..Default::default()
    };
    for variant in [Variant::VrN, Variant::VrP, Variant::BucketHard] {
        let mc = ModelConfig {
            variant,
            num_leaves: 8,
            ..Default::default()
        };
        let run = train_variant(&split, &mc, &tc).unwrap();
        let report = evaluate_model(&run.model, &split.test).unwrap();
        assert!(report.mape.is_finite(), "{variant:?}");
        assert!((0.0..=1.0).contains(&report.cr));
    }
}

#[test]
fn oracle_signal_keeps_more_campaigns_compliant() {
    let scenario = Scenario {
        n_campaigns: 40,
        horizon_minutes: 720.0,
        control: PolicySpec::TrackedOnly,
        experimental: PolicySpec::Oracle,
        ..Default::default()
    };
    let a = scenario.run(None).unwrap();
    let b = scenario.run(None).unwrap();
    assert_eq!(a, b);
    assert!(a.experimental.cr > a.control.cr, "{:?} vs {:?}", a.experimental, a.control);
}
