mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sln::analytics::*;
use sln::eval::{auc, evaluate_repeated, EvalOptions};
use sln::features::{FeatureTable, PairFeatureSeries};
use sln::predictors::{fit, ModelKind, ModelParams, ModelSpec, TrainedModel};

#[test]
fn snr_reproduces_published_rows() {
    // (formed mean, sd; unformed mean, sd) -> published SNR
    let rows = [
        ("ja", (0.1467, 0.1818, 0.0224, 0.0345), 0.5741),
        ("re", (0.2838, 0.3108, 0.0085, 0.0241), 0.8221),
        ("pr", (5413.9, 12436.0, 512.37, 1653.8), 0.3478),
        ("lp", (0.8712, 0.3454, 1.6186, 0.7165), -0.7037),
        ("np", (2.0779, 9.1893, 9.3004, 35.855), -0.1603),
        ("to", (1.0201, 1.6955, 0.4904, 0.9276), 0.2019),
    ];
    for (name, (m1, s1, m0, s0), published) in rows {
        let snr = snr_from_stats(m1, s1, m0, s0);
        assert!((snr - published).abs() <= 0.001, "{name}: {snr} vs {published}");
    }
}

fn two_group_table(formed: &[f64], unformed: &[f64]) -> FeatureTable {
    let mut series = Vec::new();
    for (values, label) in [(formed, 1u8), (unformed, 0)] {
        for &x in values {
            let k = series.len();
            series.push(PairFeatureSeries { u: k, v: k + 1, vectors: vec![[x, x, x, x, x, x, x]], labels: vec![label] });
        }
    }
    FeatureTable { learners: (0..=series.len()).map(|u| format!("l{u}")).collect(), intervals: 1, series }
}

#[test]
fn snr_table_matches_trimmed_group_stats() {
    let mut rng = rng(31);
    let formed: Vec<f64> = (0..57).map(|_| rng.random::<f64>() * 3.0 + 1.0).collect();
    let unformed: Vec<f64> = (0..203).map(|_| rng.random::<f64>() * 2.0).collect();
    let rows = snr_table(&two_group_table(&formed, &unformed), false).unwrap();
    let stats = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.truncate(v.len() - (v.len() as f64 * 0.05).ceil() as usize);
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        (s.len(), mean, (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
    };
    let (n1, m1, s1) = stats(&formed);
    let (n0, m0, s0) = stats(&unformed);
    assert_eq!((rows[0].formed.n, rows[0].unformed.n), (n1, n0));
    assert_eq!((n1, n0), (54, 192));
    assert!((rows[0].snr - (m1 - m0) / (s1 + s0)).abs() < 1e-12);
}

#[test]
fn identical_groups_have_zero_snr() {
    let values: Vec<f64> = (0..40).map(|k| (k % 7) as f64).collect();
    let rows = snr_table(&two_group_table(&values, &values), false).unwrap();
    assert!(rows.iter().all(|r| r.snr == 0.0));
    assert!(snr_table(&two_group_table(&[], &values), false).is_err());
}

#[test]
fn cdf_matches_sort_oracle() {
    let mut rng = rng(32);
    let values: Vec<f64> = (0..101).map(|_| rng.random_range(0..20) as f64).collect();
    let cdf = empirical_cdf(&values);
    for &(x, f) in &cdf {
        let below = values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64;
        // the last sample of each tie run carries the full step
        assert!(f <= below + 1e-12);
    }
    assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    assert_eq!(cdf.last().unwrap().1, 1.0);
    assert!(cdf[0].1 > 0.0);
    let constant = empirical_cdf(&[2.5; 4]);
    assert!(constant.iter().all(|&(x, _)| x == 2.5));
    assert_eq!(constant.last().unwrap().1, 1.0);
}

#[test]
fn cdf_export_splits_by_final_label() {
    let table = two_group_table(&[3.0, 1.0], &[0.0, 0.5, 0.25]);
    let curves = cdf_export(&table, "np", false).unwrap();
    assert_eq!(curves.formed, vec![(1.0, 0.5), (3.0, 1.0)]);
    assert_eq!(curves.unformed.len(), 3);
    assert!(cdf_export(&table, "xx", false).is_err());
    let mut out = Vec::new();
    write_cdf_csv(&curves, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("feature,group,value,cdf\nnp,formed,1,0.5\n"));
}

fn zero_weight_rnn(table: &FeatureTable) -> TrainedModel {
    let pairs: Vec<usize> = (0..table.series.len()).collect();
    let mut model = fit(&ModelSpec::new(ModelKind::Rnn).with_epochs(0), table, &pairs).unwrap();
    if let ModelParams::Nn(m) = &mut model.params {
        m.params.iter_mut().for_each(|p| *p = 0.0);
    }
    model
}

fn gate<'a>(trace: &'a GateTrace, name: &str) -> &'a Vec<Vec<f64>> {
    &trace.gates.iter().find(|(g, _)| g == name).unwrap().1
}

#[test]
fn zero_weight_gates_have_closed_form() {
    let table = planted_re_table(20, 6, 33);
    let trace = gate_trace(&zero_weight_rnn(&table), &table, 3).unwrap();
    for (name, want) in [("i", 0.5), ("f", 0.5), ("o", 0.5), ("g", 0.0), ("z", 0.0), ("h", 0.5)] {
        let m = gate(&trace, name);
        assert_eq!(m.len(), 64);
        assert!(m.iter().flatten().all(|&x| x == want), "{name}");
        assert!(m.iter().all(|row| row.len() == 6));
    }
}

#[test]
fn saturated_forget_and_closed_input_freeze_the_state() {
    let table = planted_re_table(40, 6, 34);
    let pairs: Vec<usize> = (0..40).collect();
    let mut model = fit(&ModelSpec::new(ModelKind::Rnn).with_epochs(3), &table, &pairs).unwrap();
    let cell = model.network().unwrap().lstm_cell().unwrap();
    if let ModelParams::Nn(m) = &mut model.params {
        cell.gate_bias_mut(&mut m.params, "f").unwrap().iter_mut().for_each(|b| *b = 60.0);
        cell.gate_bias_mut(&mut m.params, "i").unwrap().iter_mut().for_each(|b| *b = -60.0);
    }
    let trace = gate_trace(&model, &table, 5).unwrap();
    for row in gate(&trace, "z") {
        assert!(row.iter().all(|&z| (z - row[0]).abs() < 1e-12), "{row:?}");
    }
    assert!(gate(&trace, "f").iter().flatten().all(|&f| f > 1.0 - 1e-12));
}

#[test]
fn gate_trace_needs_a_recurrent_layer() {
    let table = planted_re_table(20, 4, 35);
    let model = fit(&ModelSpec::new(ModelKind::Cnn).with_epochs(1), &table, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
    assert!(gate_trace(&model, &table, 0).is_err());
}

/// `re` jumps from a low to a high band at the formation interval.
fn step_table(pairs: usize, intervals: usize, seed: u64) -> FeatureTable {
    let mut rng = rng(seed);
    let series = (0..pairs)
        .map(|p| {
            let n = rng.random_range(2..=intervals + intervals / 2);
            let vectors = (1..=intervals)
                .map(|i| {
                    let mut v: [f64; 7] = std::array::from_fn(|_| rng.random::<f64>());
                    v[2] = if i >= n { 1.0 + 0.2 * v[2] } else { 0.2 * v[2] };
                    v
                })
                .collect();
            let labels = (1..=intervals).map(|i| u8::from(i >= n)).collect();
            PairFeatureSeries { u: p, v: p + 1, vectors, labels }
        })
        .collect();
    FeatureTable { learners: (0..=pairs).map(|u| format!("l{u}")).collect(), intervals, series }
}

#[test]
fn trained_state_moves_near_formation() {
    let table = step_table(200, 10, 36);
    let pairs: Vec<usize> = (0..200).collect();
    let model = fit(&ModelSpec::new(ModelKind::Rnn).with_epochs(20).with_seed(2), &table, &pairs).unwrap();
    let scores = model.predict(&table, &pairs).unwrap();
    // late-forming links the model places exactly
    let mut checked = 0;
    for &p in &pairs {
        let Some(n) = table.series[p].formation_interval() else { continue };
        if n < 5 || sln::eval::predicted_formation(&scores[p], 0.5) != Some(n) {
            continue;
        }
        let trace = gate_trace(&model, &table, p).unwrap();
        let h = gate(&trace, "h");
        let change = |t: usize| h.iter().map(|row| (row[t] - row[t - 1]).abs()).sum::<f64>();
        let peak = (1..10).max_by(|&a, &b| change(a).total_cmp(&change(b))).unwrap() + 1;
        assert!(peak.abs_diff(n) <= 2, "pair {p}: formation {n}, largest move at {peak}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn ablation_with_every_group_is_the_standard_crnn() {
    let table = planted_re_table(60, 6, 37);
    let options = EvalOptions { k: 3, seed: 1, repeats: 1, threshold: 0.5 };
    let base = ModelSpec::new(ModelKind::Crnn).with_epochs(3).with_seed(5);
    let all = ablation(&[FeatureGroup::Nei, FeatureGroup::Path, FeatureGroup::Post], &base, &table, "toy", options).unwrap();
    let standard = evaluate_repeated(&base, &table, "toy", options).unwrap();
    assert_eq!(all.folds, standard.folds);
    assert!(ablation(&[], &base, &table, "toy", options).is_err());
}

#[test]
fn neighborhood_subsets_beat_path_and_post_on_planted_re() {
    let table = planted_re_table(150, 6, 38);
    let options = EvalOptions { k: 3, seed: 2, repeats: 1, threshold: 0.5 };
    let base = ModelSpec::new(ModelKind::Crnn).with_epochs(15).with_seed(6);
    let score = |groups: &[FeatureGroup]| ablation(groups, &base, &table, "toy", options).unwrap().auc().0;
    let weak = score(&[FeatureGroup::Path, FeatureGroup::Post]);
    for groups in [[FeatureGroup::Nei, FeatureGroup::Path], [FeatureGroup::Nei, FeatureGroup::Post]] {
        let strong = score(&groups);
        assert!(strong > weak, "{groups:?}: {strong} vs {weak}");
    }
}

#[test]
fn graph_csv_has_one_row_per_interval() {
    let tl = sln::graph::Timeline::from_links(
        3,
        sln::ingest::CourseWindow::new(0, 3).unwrap(),
        vec!["a".into(), "b".into(), "c".into()],
        [((0, 1), 2), ((1, 2), 3)],
    )
    .unwrap();
    let mut out = Vec::new();
    write_graph_csv(&graph_report(&tl), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,3,0,0,"));
    assert!(lines[3].starts_with("3,3,3,2,"));
}

proptest! {
    #[test]
    fn snr_is_antisymmetric_and_scale_free(
        formed in proptest::collection::vec(0.0f64..10.0, 3..40),
        unformed in proptest::collection::vec(0.0f64..10.0, 3..40),
        c in 0.01f64..100.0,
    ) {
        let a = snr_table(&two_group_table(&formed, &unformed), false).unwrap();
        let b = snr_table(&two_group_table(&unformed, &formed), false).unwrap();
        let scaled_f: Vec<f64> = formed.iter().map(|x| x * c).collect();
        let scaled_u: Vec<f64> = unformed.iter().map(|x| x * c).collect();
        let s = snr_table(&two_group_table(&scaled_f, &scaled_u), false).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&s) {
            if x.snr.is_finite() {
                prop_assert_eq!(x.snr, -y.snr);
                prop_assert!((x.snr - z.snr).abs() < 1e-9 * (1.0 + x.snr.abs()));
            }
        }
    }

    #[test]
    fn trimming_is_deterministic(values in proptest::collection::vec(-1e3f64..1e3, 0..200), frac in 0.0f64..0.5) {
        let a = trim_top(&values, frac);
        prop_assert_eq!(&a, &trim_top(&values, frac));
        prop_assert_eq!(a.len(), values.len() - (frac * values.len() as f64).ceil() as usize);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(&a[..], &sorted[..a.len()]);
    }

    #[test]
    fn gate_ranges_hold(seed in 0u64..500) {
        let table = null_table(20, 5, seed);
        let pairs: Vec<usize> = (0..20).collect();
        prop_assume!(table.final_labels().iter().any(|&y| y == 1) && table.final_labels().iter().any(|&y| y == 0));
        let model = fit(&ModelSpec::new(ModelKind::Crnn).with_epochs(1).with_seed(seed), &table, &pairs).unwrap();
        let trace = gate_trace(&model, &table, (seed % 20) as usize).unwrap();
        for (name, m) in &trace.gates {
            for &x in m.iter().flatten() {
                match name.as_str() {
                    "i" | "f" | "o" | "h" => prop_assert!(x > 0.0 && x < 1.0),
                    "g" => prop_assert!(x > -1.0 && x < 1.0),
                    _ => prop_assert!(x.is_finite()),
                }
            }
        }
    }
}

#[test]
fn null_auc_helper_sanity() {
    let table = null_table(50, 3, 39);
    let pairs: Vec<usize> = (0..50).collect();
    let scores: Vec<f64> = flat(&sln::predictors::predict_re(&table, &pairs));
    assert!(auc(&scores, &labels_of(&table, &pairs)).is_ok());
}
