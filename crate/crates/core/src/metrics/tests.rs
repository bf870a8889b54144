use super::*;
use crate::rng::RngStream;
use alloc::string::ToString;
use proptest::prelude::*;

fn rec(label: usize, scores: &[f64]) -> PredictionRecord {
    PredictionRecord { sample_id: format!("s{label}"), true_label: label, scores: scores.to_vec() }
}

/// Records whose argmax realizes `counts` exactly.
fn records_for(counts: &[u64], k: usize) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for a in 0..k {
        for p in 0..k {
            for i in 0..counts[a * k + p] {
                let mut scores = vec![0.0; k];
                scores[p] = 1.0;
                out.push(PredictionRecord { sample_id: format!("{a}-{p}-{i}"), true_label: a, scores });
            }
        }
    }
    out
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

const TISSUES: [&str; 5] = ["colon_aca", "colon_n", "lung_aca", "lung_n", "lung_scc"];

/// A confusion matrix consistent with the reference diagonal counts and
/// table rows; off-diagonal placement is one realization among many.
const REFERENCE_CONFUSION: [u64; 25] = [
    474, 20, 6, 0, 0, //
    7, 490, 2, 1, 0, //
    2, 4, 472, 4, 18, //
    0, 0, 0, 500, 0, //
    1, 1, 44, 0, 453,
];

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    assert_eq!(argmax(&[0.3, 0.3, 0.3]), 0);
    assert_eq!(argmax(&[1.0]), 0);
}

#[test]
fn perfect_predictions_give_diagonal() {
    let recs = records_for(&[3, 0, 0, 0, 5, 0, 0, 0, 2], 3);
    let cm = confusion_matrix(&recs, 3).unwrap();
    assert_eq!(cm.counts, vec![3, 0, 0, 0, 5, 0, 0, 0, 2]);
    let s = precision_recall_f1(&cm).unwrap();
    assert!(s.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
    assert_eq!((s.accuracy, s.macro_avg.f1, s.weighted_avg.f1), (1.0, 1.0, 1.0));
}

#[test]
fn confusion_matches_tally_oracle() {
    let mut rng = RngStream::new(3, 0);
    let recs: Vec<PredictionRecord> = (0..300)
        .map(|i| PredictionRecord {
            sample_id: i.to_string(),
            true_label: rng.below(4) as usize,
            scores: (0..4).map(|_| (rng.below(3) as f64) / 2.0).collect(),
        })
        .collect();
    let cm = confusion_matrix(&recs, 4).unwrap();
    for a in 0..4 {
        for p in 0..4 {
            let n = recs
                .iter()
                .filter(|r| {
                    let m = r.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    r.true_label == a && r.scores.iter().position(|&s| s == m) == Some(p)
                })
                .count();
            assert_eq!(cm.get(a, p), n as u64);
        }
    }
    assert_eq!(cm.total(), 300);
}

#[test]
fn bad_records_are_contract_errors() {
    assert!(matches!(confusion_matrix(&[rec(3, &[0.1, 0.2, 0.7])], 3), Err(Error::Contract(_))));
    assert!(matches!(confusion_matrix(&[rec(0, &[0.1, 0.9])], 3), Err(Error::Contract(_))));
    assert!(matches!(confusion_matrix(&[rec(0, &[f64::NAN, 0.0])], 2), Err(Error::Contract(_))));
    let empty = ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap();
    assert!(matches!(precision_recall_f1(&empty), Err(Error::Contract(_))));
}

#[test]
fn reference_counts_reproduce_report_cells() {
    let recs = records_for(&REFERENCE_CONFUSION, 5);
    let names: Vec<String> = TISSUES.iter().map(|s| s.to_string()).collect();
    let report = MetricsReport::from_records(&recs, &names).unwrap();
    let s = &report.summary;
    assert_eq!(s.per_class[0].recall, 474.0 / 500.0);
    assert_eq!(s.per_class[1].recall, 490.0 / 500.0);
    assert_eq!(s.per_class[4].recall, 453.0 / 499.0);
    let supports: Vec<u64> = s.per_class.iter().map(|m| m.support).collect();
    assert_eq!(supports, [500, 500, 500, 500, 499]);
    let table = [
        ["0.98", "0.95", "0.96"],
        ["0.95", "0.98", "0.97"],
        ["0.90", "0.94", "0.92"],
        ["0.99", "1.00", "1.00"],
        ["0.96", "0.91", "0.93"],
    ];
    for (m, row) in s.per_class.iter().zip(table) {
        assert_eq!([round2(m.precision), round2(m.recall), round2(m.f1)], row.map(String::from));
    }
    assert_eq!(round2(s.accuracy), "0.96");
    for a in [s.macro_avg, s.weighted_avg] {
        assert_eq!([round2(a.precision), round2(a.recall), round2(a.f1)], ["0.96", "0.96", "0.96"].map(String::from));
    }
    let text = render_report(&report);
    let labels: Vec<&str> = text.lines().skip(1).take(8).map(|l| l.split("  ").next().unwrap().trim()).collect();
    assert_eq!(labels, ["colon_aca", "colon_n", "lung_aca", "lung_n", "lung_scc", "Accuracy", "Macro Avg", "Weighted Avg"]);
    assert!(text.lines().nth(1).unwrap().split_whitespace().eq(["colon_aca", "0.98", "0.95", "0.96", "500"]));
    assert!(text.lines().nth(6).unwrap().split_whitespace().eq(["Accuracy", "0.96", "2499"]));
}

#[test]
fn zero_denominators_are_flagged() {
    // class 2 never occurs and is never predicted
    let cm = ConfusionMatrix::from_counts(3, vec![2, 1, 0, 0, 3, 0, 0, 0, 0]).unwrap();
    let s = precision_recall_f1(&cm).unwrap();
    let c = s.per_class[2];
    assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
    assert!(c.precision_undefined && c.recall_undefined && c.f1_undefined);
    assert!(!s.per_class[0].precision_undefined);
}

#[test]
fn round_half_up() {
    for (x, s) in [(0.948, "0.95"), (0.945, "0.95"), (0.9449, "0.94"), (0.005, "0.01"), (1.0, "1.00"), (0.0, "0.00"), (0.995, "1.00"), (0.90781, "0.91")] {
        assert_eq!(round2(x), s, "{x}");
    }
}

#[test]
fn perfect_report_renders_ones() {
    let recs = records_for(&[4, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 4], 5);
    let report = MetricsReport::from_records(&recs, &names(5)).unwrap();
    let text = render_report(&report);
    for line in text.lines().skip(1).take(8) {
        for cell in line.split_whitespace().filter(|c| c.contains('.')) {
            assert_eq!(cell, "1.00");
        }
    }
    assert!(report.auc.iter().all(|a| *a == Some(1.0)));
}

#[test]
fn roc_basic_shapes() {
    let sep = [rec(0, &[0.9, 0.1]), rec(0, &[0.8, 0.2]), rec(1, &[0.3, 0.7]), rec(1, &[0.1, 0.9])];
    let curve = roc_curve(&sep, 0).unwrap();
    assert!(curve.contains(&(0.0, 1.0)));
    assert_eq!(auc_trapezoid(&curve).unwrap(), 1.0);
    assert_eq!(auc_pair_oracle(&sep, 0).unwrap(), 1.0);

    let ties = [rec(0, &[0.5, 0.5]), rec(1, &[0.5, 0.5]), rec(1, &[0.5, 0.5])];
    let curve = roc_curve(&ties, 0).unwrap();
    assert_eq!(curve, vec![(0.0, 0.0), (1.0, 1.0)]);
    assert_eq!(auc_trapezoid(&curve).unwrap(), 0.5);
    assert_eq!(auc_pair_oracle(&ties, 0).unwrap(), 0.5);

    let one = [rec(0, &[0.9, 0.1]), rec(0, &[0.4, 0.6]), rec(1, &[0.5, 0.5])];
    assert_eq!(auc_pair_oracle(&one, 0).unwrap(), 0.5);
    assert_eq!(auc_trapezoid(&roc_curve(&one, 0).unwrap()).unwrap(), 0.5);

    assert!(matches!(roc_curve(&sep[..2], 0), Err(Error::DegenerateInput(_))));
    assert!(matches!(auc_pair_oracle(&sep[2..], 0), Err(Error::DegenerateInput(_))));
}

#[test]
fn trapezoid_rejects_bad_curves() {
    assert_eq!(auc_trapezoid(&[(0.0, 0.0), (1.0, 1.0)]).unwrap(), 0.5);
    assert_eq!(auc_trapezoid(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap(), 1.0);
    assert!(matches!(auc_trapezoid(&[(0.0, 0.0), (0.6, 0.5), (0.4, 0.7), (1.0, 1.0)]), Err(Error::Contract(_))));
    assert!(matches!(auc_trapezoid(&[(0.0, 0.0), (0.5, 0.8), (0.6, 0.7), (1.0, 1.0)]), Err(Error::Contract(_))));
    assert!(matches!(auc_trapezoid(&[(0.1, 0.0), (1.0, 1.0)]), Err(Error::Contract(_))));
}

#[test]
fn roc_points_match_exhaustive_threshold_oracle() {
    for seed in 0..50 {
        let mut rng = RngStream::new(seed, 4);
        let mut recs: Vec<PredictionRecord> = (0..20)
            .map(|_| rec(rng.below(2) as usize, &[(rng.below(8) as f64) / 8.0, 0.0]))
            .collect();
        recs[0].true_label = 0;
        recs[1].true_label = 1;
        let curve = roc_curve(&recs, 0).unwrap();
        let mut thresholds: Vec<f64> = recs.iter().map(|r| r.scores[0]).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let p = recs.iter().filter(|r| r.true_label == 0).count() as f64;
        let n = recs.len() as f64 - p;
        let mut expect = vec![(0.0, 0.0)];
        for t in thresholds {
            let tp = recs.iter().filter(|r| r.true_label == 0 && r.scores[0] >= t).count() as f64;
            let fp = recs.iter().filter(|r| r.true_label != 0 && r.scores[0] >= t).count() as f64;
            expect.push((fp / n, tp / p));
        }
        assert_eq!(curve, expect);
    }
}

fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    (2usize..=200, any::<u64>(), 1u64..50).prop_map(|(n, seed, levels)| {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|i| {
                // few distinct levels inject ties
                let s = rng.below(levels) as f64 / levels as f64;
                let label = if i == 0 { 0 } else if i == 1 { 1 } else { rng.below(3) as usize };
                PredictionRecord { sample_id: i.to_string(), true_label: label, scores: vec![s, 1.0 - s, 0.5] }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trapezoid_auc_equals_pair_counting(recs in arb_records()) {
        let curve = roc_curve(&recs, 0).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert!(curve.iter().all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
        let a = auc_trapezoid(&curve).unwrap();
        let b = auc_pair_oracle(&recs, 0).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn report_is_order_insensitive(recs in arb_records(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        RngStream::new(seed, 1).shuffle(&mut shuffled);
        let a = MetricsReport::from_records(&recs, &names(3)).unwrap();
        let b = MetricsReport::from_records(&shuffled, &names(3)).unwrap();
        prop_assert_eq!(render_report(&a), render_report(&b));
        prop_assert_eq!(&a, &b);
        let cm = &a.confusion;
        prop_assert_eq!(cm.total(), recs.len() as u64);
        for c in 0..3 {
            prop_assert_eq!(cm.row_sum(c), a.summary.per_class[c].support);
        }
        prop_assert_eq!(a.summary.accuracy, cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn equal_supports_make_weighted_equal_macro(k in 2usize..7, support in 1u64..40, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let mut counts = vec![0u64; k * k];
        for a in 0..k {
            for _ in 0..support {
                counts[a * k + rng.below(k as u64) as usize] += 1;
            }
        }
        let s = precision_recall_f1(&ConfusionMatrix::from_counts(k, counts).unwrap()).unwrap();
        prop_assert_eq!(s.macro_avg, s.weighted_avg);
    }
}
