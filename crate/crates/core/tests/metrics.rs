mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sln::eval::*;
use sln::SlnError;

#[test]
fn auc_equals_mann_whitney() {
    let mut rng = rng(21);
    for _ in 0..500 {
        let (scores, labels) = random_scored_instance(&mut rng);
        assert!((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn auc_of_independent_labels_is_half() {
    let mut rng = rng(22);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..10_000).map(|_| u8::from(rng.random::<f64>() < 0.1)).collect();
    assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 0.02);
}

#[test]
fn auc_perfect_and_reversed() {
    let labels = [0, 0, 1, 1];
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
    assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(SlnError::SingleClass)));
}

#[test]
fn roc_runs_from_origin_to_corner() {
    let mut rng = rng(23);
    let (scores, labels) = random_scored_instance(&mut rng);
    let roc = roc_curve(&scores, &labels).unwrap();
    assert_eq!(roc.first(), Some(&(0.0, 0.0)));
    assert_eq!(roc.last(), Some(&(1.0, 1.0)));
    assert!(roc.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    // trapezoid area equals the rank statistic
    let area: f64 = roc.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    assert!((area - auc(&scores, &labels).unwrap()).abs() < 1e-12);
}

#[test]
fn all_negative_predictor_scores_the_negative_share() {
    // 2% positive rate
    let labels: Vec<Vec<u8>> = (0..50).map(|p| (0..20).map(|i| u8::from(p == 0 && i < 20)).collect()).collect();
    let zeros: Vec<Vec<f64>> = labels.iter().map(|y| vec![0.0; y.len()]).collect();
    assert_eq!(acc(&zeros, &labels, 0.5).unwrap(), 0.98);
    let mut rng = rng(24);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let l = rng.random_range(1..10);
        let labels: Vec<Vec<u8>> = (0..n).map(|_| (0..l).map(|_| u8::from(rng.random::<f64>() < 0.2)).collect()).collect();
        let zeros: Vec<Vec<f64>> = labels.iter().map(|y| vec![0.0; y.len()]).collect();
        let negatives = labels.iter().flatten().filter(|&&y| y == 0).count();
        assert_eq!(acc(&zeros, &labels, 0.5).unwrap(), negatives as f64 / (n * l) as f64);
    }
}

#[test]
fn acc_rejects_ragged_predictions() {
    assert!(acc(&[vec![0.0]], &[vec![0, 1]], 0.5).is_err());
}

#[test]
fn tac_worked_example() {
    // offsets 0, 1 and 3
    let times = [(4, 4), (5, 6), (2, 5)];
    assert!((tac(&times, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(tac(&times, 0).unwrap(), 1.0 / 3.0);
    assert_eq!(tac(&times, 3).unwrap(), 1.0);
    assert_eq!(tac(&[], 2), None);
}

#[test]
fn formation_times_need_both_a_link_and_a_prediction() {
    let scores = vec![vec![0.1, 0.7, 0.9], vec![0.9, 0.9, 0.9], vec![0.0, 0.1, 0.2], vec![0.6, 0.0, 0.0]];
    let labels = vec![vec![0, 0, 1], vec![0, 0, 0], vec![0, 1, 1], vec![1, 1, 1]];
    assert_eq!(formation_times(&scores, &labels, 0.5), vec![(2, 3), (1, 1)]);
    assert_eq!(predicted_formation(&[0.2, 0.5], 0.5), Some(2));
}

#[test]
fn folds_of_ten_formed_in_a_thousand() {
    let labels: Vec<u8> = (0..1000).map(|p| u8::from(p < 10)).collect();
    let plan = make_folds(&labels, 10, 5).unwrap();
    for t in &plan.test {
        assert_eq!(t.iter().filter(|&&p| labels[p] == 1).count(), 1);
        assert_eq!(t.len(), 100);
    }
    assert!(matches!(make_folds(&labels[..], 20, 5), Err(SlnError::TooFewPositives { positives: 10, k: 20 })));
}

#[test]
fn report_csv_has_mean_and_sd_rows() {
    let report = MetricReport {
        model: "cnn".into(),
        dataset: "toy".into(),
        intervals: 2,
        folds: vec![
            FoldMetrics { repeat: 0, fold: 0, acc: 0.9, auc: 0.8, tac: vec![Some(0.5), Some(1.0), Some(1.0)] },
            FoldMetrics { repeat: 0, fold: 1, acc: 0.7, auc: 0.6, tac: vec![None, None, None] },
        ],
    };
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,dataset,fold,acc,auc,tac_w0,tac_w1,tac_w2");
    assert_eq!(lines[2], "cnn,toy,1,0.7,0.6,NA,NA,NA");
    assert!(lines[3].starts_with("cnn,toy,mean,0.8"));
    assert!(lines[4].starts_with("cnn,toy,sd,0.1414"));
    assert!(lines[3].ends_with(",0.5,1,1"));
}

proptest! {
    #[test]
    fn folds_partition_pairs(labels in proptest::collection::vec(proptest::bool::weighted(0.15), 40..400), k in 2usize..8, seed in any::<u64>()) {
        let labels: Vec<u8> = labels.into_iter().map(u8::from).collect();
        let positives = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(positives >= k && positives < labels.len());
        let plan = make_folds(&labels, k, seed).unwrap();
        let mut seen = BTreeSet::new();
        for (f, t) in plan.test.iter().enumerate() {
            for &p in t {
                prop_assert!(seen.insert(p));
            }
            let train: BTreeSet<usize> = plan.train(f).into_iter().collect();
            prop_assert!(t.iter().all(|p| !train.contains(p)));
            prop_assert_eq!(train.len() + t.len(), labels.len());
            let pos = t.iter().filter(|&&p| labels[p] == 1).count() as f64;
            let neg = t.len() as f64 - pos;
            let (gp, gn) = (positives as f64 / k as f64, (labels.len() - positives) as f64 / k as f64);
            prop_assert!((pos - gp).abs() <= 1.0 && (neg - gn).abs() <= 1.0);
        }
        prop_assert_eq!(seen.len(), labels.len());
        prop_assert_eq!(make_folds(&labels, k, seed).unwrap(), plan);
    }

    #[test]
    fn auc_is_rank_based(seed in any::<u64>(), shift in -5.0f64..5.0, scale in 0.01f64..100.0) {
        let mut rng = rng(seed);
        let (scores, labels) = random_scored_instance(&mut rng);
        let base = auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        prop_assert_eq!(auc(&transformed, &labels).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn tac_is_monotone_and_reaches_one(times in proptest::collection::vec((1usize..=20, 1usize..=20), 1..50)) {
        let curve = tac_curve(&times, 20);
        let values: Vec<f64> = curve.iter().map(|t| t.unwrap()).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(values[20], 1.0);
    }

    #[test]
    fn mean_sd_matches_two_pass(values in proptest::collection::vec(-1e3f64..1e3, 2..30)) {
        let (m, s) = mean_sd(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        prop_assert!((m - mean).abs() < 1e-9 && (s - var.sqrt()).abs() < 1e-9);
    }
}
