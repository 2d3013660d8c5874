mod common;

use common::{rand_rows, rng, separated_spec};
use dpn_core::config::Config;
use dpn_core::data_io::{generate_synthetic, SynthSpec};
use dpn_core::dataset::Dataset;
use dpn_core::evaluation::{
    clustering_accuracy, estimate_k, evaluate, metrics_tsv, report_text, subset_tallies, EvalOptions,
};
use dpn_core::learning::train;
use dpn_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn small_inputs_match_brute_force() {
    let mut cases = 0;
    common::for_each_small_input(6, 4, |truth, predicted| {
        cases += 1;
        let refs: Vec<&str> = truth.iter().map(String::as_str).collect();
        let acc = clustering_accuracy(&refs, predicted).unwrap();
        assert_eq!(
            acc.correct,
            common::brute_force_agreement(&refs, predicted),
            "{refs:?} {predicted:?}"
        );
    });
    assert!(cases > 1000);
}

#[test]
fn accuracy_examples() {
    let t = ["a", "a", "b", "b"];
    assert_eq!(clustering_accuracy(&t, &[0, 0, 1, 1]).unwrap().accuracy, 1.0);
    assert_eq!(clustering_accuracy(&t, &[1, 1, 0, 0]).unwrap().accuracy, 1.0);
    assert_eq!(clustering_accuracy(&t, &[1, 1, 0, 2]).unwrap().accuracy, 0.75);
    assert!(matches!(clustering_accuracy(&t, &[0]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn invariant_under_relabeling(
        pairs in proptest::collection::vec((0usize..4, 0usize..5), 1..30),
        seed in 0u64..1000,
    ) {
        let mut r = rng(seed);
        let names = ["w", "x", "y", "z"];
        let mut renamed = names.to_vec();
        renamed.shuffle(&mut r);
        let mut cluster_perm: Vec<usize> = (0..5).collect();
        cluster_perm.shuffle(&mut r);

        let truth: Vec<&str> = pairs.iter().map(|(t, _)| names[*t]).collect();
        let pred: Vec<usize> = pairs.iter().map(|(_, p)| *p).collect();
        let truth2: Vec<&str> = pairs.iter().map(|(t, _)| renamed[*t]).collect();
        let pred2: Vec<usize> = pred.iter().map(|p| cluster_perm[*p]).collect();

        let a = clustering_accuracy(&truth, &pred).unwrap();
        let b = clustering_accuracy(&truth2, &pred2).unwrap();
        prop_assert_eq!(a.correct, b.correct);
        prop_assert!((0.0..=1.0).contains(&a.accuracy));

        let is_known: Vec<bool> = pairs.iter().map(|(t, _)| *t < 2).collect();
        let (known, novel) = subset_tallies(&truth, &pred, &is_known, &a, false).unwrap();
        prop_assert_eq!(known.correct + novel.correct, a.correct);
        prop_assert_eq!(known.total + novel.total, a.total);
    }
}

fn trained(spec: &SynthSpec, seed: u64) -> (Dataset, dpn_core::learning::TrainState, Config) {
    let data = generate_synthetic(spec).unwrap();
    let config = Config {
        seed,
        ..Config::default()
    };
    let state = train(&data.training_view(), &config).unwrap();
    (data, state, config)
}

#[test]
fn single_category_is_perfect() {
    let spec = SynthSpec {
        k_true: 1,
        m: 1,
        ..separated_spec(1, 1, 3)
    };
    let (data, state, config) = trained(&spec, 3);
    let report = evaluate(&state, &data, &EvalOptions::from_config(&config, None)).unwrap();
    assert_eq!(report.k, 1);
    assert_eq!(report.acc_all(), 1.0);
    assert_eq!(report.acc_known(), Some(1.0));
    assert_eq!(report.acc_novel(), None);
}

#[test]
fn test_row_order_does_not_change_metrics() {
    let (data, state, config) = trained(&separated_spec(6, 4, 4), 4);
    let mut test = data.test().to_vec();
    test.reverse();
    test.shuffle(&mut rng(9));
    let permuted = Dataset::new(
        data.labeled().to_vec(),
        data.unlabeled().to_vec(),
        test,
        data.label_space().clone(),
    )
    .unwrap();
    let opts = EvalOptions::from_config(&config, None);
    let a = evaluate(&state, &data, &opts).unwrap();
    let b = evaluate(&state, &permuted, &opts).unwrap();
    assert_eq!(metrics_tsv(&a), metrics_tsv(&b));
    assert_eq!(a, b);
}

#[test]
fn missing_ground_truth_is_an_eval_error() {
    let (data, state, config) = trained(&separated_spec(3, 2, 5), 5);
    let mut test = data.test().to_vec();
    test[0].truth = None;
    let broken = Dataset::new(
        data.labeled().to_vec(),
        data.unlabeled().to_vec(),
        test,
        data.label_space().clone(),
    )
    .unwrap();
    assert!(matches!(
        evaluate(&state, &broken, &EvalOptions::from_config(&config, None)),
        Err(Error::EvalData(_))
    ));
}

#[test]
fn report_has_accuracies_estimate_and_additive_counts() {
    let (data, state, config) = trained(&separated_spec(6, 4, 6), 6);
    let report = evaluate(&state, &data, &EvalOptions::from_config(&config, Some(12))).unwrap();
    assert!(report.acc_all() >= 0.95);
    assert_eq!(report.estimated_k, Some(6));
    assert_eq!(report.known.correct + report.novel.correct, report.all.correct);
    let n = report.all.total as f64;
    let lhs = report.acc_all() * n;
    let rhs = report.acc_known().unwrap() * report.known.total as f64
        + report.acc_novel().unwrap() * report.novel.total as f64;
    assert!((lhs - rhs).abs() < 1e-9);

    let metrics = metrics_tsv(&report);
    for key in ["acc_all\t", "acc_known\t", "acc_novel\t", "estimated_k\t6"] {
        assert!(metrics.contains(key), "{key}");
    }
    let text = report_text(&report);
    for key in ["All", "Known", "Novel", "Estimated K  6", "84.23"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn estimate_examples() {
    // Four well-separated clusters of 50 points.
    let mut r = rng(60);
    let mut points = Vec::new();
    for c in 0..4 {
        for mut p in rand_rows(&mut r, 50, 8, -1.0, 1.0) {
            p[c] += 12.0;
            points.push(p);
        }
    }
    assert_eq!(points.len(), 200);
    assert_eq!(estimate_k(&points, 8, 0.5, 0, 10).unwrap(), 4);

    // One tight cluster.
    let mut r = rng(61);
    let blob = rand_rows(&mut r, 100, 3, -0.1, 0.1);
    assert_eq!(estimate_k(&blob, 4, 0.5, 0, 10).unwrap(), 1);

    assert!(matches!(
        estimate_k(&blob[..3], 4, 0.5, 0, 10),
        Err(Error::InfeasibleK { .. })
    ));
    assert!(matches!(estimate_k(&blob, 1, 0.5, 0, 10), Err(Error::Config(_))));
    assert_eq!(
        estimate_k(&points, 8, 0.5, 7, 10).unwrap(),
        estimate_k(&points, 8, 0.5, 7, 10).unwrap()
    );
}

#[test]
fn estimates_within_one_of_truth() {
    let (t, pairs) = common::estimate_k_trials(12);
    assert!(t.all(), "{pairs:?}");
}
