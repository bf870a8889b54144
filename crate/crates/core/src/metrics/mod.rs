//! Classification metrics over per-sample prediction records.
//!
//! Everything here is a pure function of the record multiset: reordering the
//! records never changes a count, a curve point or a rendered cell.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

/// One evaluated sample: its true class and one score per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub true_label: usize,
    pub scores: Vec<f64>,
}

impl PredictionRecord {
    pub fn predicted(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `K × K` counts, rows actual and columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::Dimension(format!(
                "{} counts do not form a {k}x{k} matrix",
                counts.len()
            )));
        }
        Ok(Self { k, counts })
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r * self.k..(r + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn check_records(records: &[PredictionRecord], k: usize) -> Result<()> {
    for r in records {
        if r.true_label >= k {
            return Err(Error::Contract(format!(
                "sample `{}` has label {} but there are {k} classes",
                r.sample_id, r.true_label
            )));
        }
        if r.scores.len() != k {
            return Err(Error::Contract(format!(
                "sample `{}` carries {} scores for {k} classes",
                r.sample_id,
                r.scores.len()
            )));
        }
        if r.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("sample `{}` has a non-finite score", r.sample_id)));
        }
    }
    Ok(())
}

pub fn confusion_matrix(records: &[PredictionRecord], k: usize) -> Result<ConfusionMatrix> {
    check_records(records, k)?;
    let mut counts = vec![0u64; k * k];
    for r in records {
        counts[r.true_label * k + r.predicted()] += 1;
    }
    ConfusionMatrix::from_counts(k, counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a denominator was zero and the metric was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSummary {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Result<ClassificationSummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("confusion matrix holds no samples".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, cm.row_sum(c));
            let (f1, f1_undefined) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
                precision_undefined,
                recall_undefined,
                f1_undefined,
            }
        })
        .collect();

    let k = cm.k as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    // Integer weights reduced by their gcd, so equal supports reproduce the
    // macro mean bit for bit.
    let g = per_class.iter().fold(0, |g, m| gcd(g, m.support));
    let weights: Vec<f64> = per_class.iter().map(|m| (m.support / g) as f64).collect();
    let wsum = (total / g) as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().zip(&weights).map(|(m, w)| w * f(m)).sum::<f64>() / wsum
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    Ok(ClassificationSummary {
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        macro_avg,
        weighted_avg,
        total,
    })
}

fn one_vs_rest(records: &[PredictionRecord], positive: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in records {
        let s = *r.scores.get(positive).ok_or_else(|| {
            Error::Contract(format!("sample `{}` has no score for class {positive}", r.sample_id))
        })?;
        if !s.is_finite() {
            return Err(Error::Contract(format!("sample `{}` has a non-finite score", r.sample_id)));
        }
        if r.true_label == positive {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "class {positive} needs at least one positive and one negative sample ({} / {})",
            pos.len(),
            neg.len()
        )));
    }
    Ok((pos, neg))
}

/// One-vs-rest ROC points `(fpr, tpr)`: one per distinct score threshold in
/// descending order, preceded by `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(records: &[PredictionRecord], positive: usize) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = one_vs_rest(records, positive)?;
    let mut scored: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(curve)
}

/// Trapezoidal area under a monotone curve anchored at `(0, 0)` and `(1, 1)`.
pub fn auc_trapezoid(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.first() != Some(&(0.0, 0.0)) || curve.last() != Some(&(1.0, 1.0)) {
        return Err(Error::Contract("ROC curve must run from (0, 0) to (1, 1)".into()));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 < x0 || y1 < y0 {
            return Err(Error::Contract(format!(
                "ROC curve is not monotone at ({x0}, {y0}) -> ({x1}, {y1})"
            )));
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// `P(score_pos > score_neg) + ½·P(tie)` by exhaustive pair counting.
pub fn auc_pair_oracle(records: &[PredictionRecord], positive: usize) -> Result<f64> {
    let (pos, neg) = one_vs_rest(records, positive)?;
    let mut twice_wins = 0u64;
    for &p in &pos {
        for &n in &neg {
            twice_wins += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Ok(twice_wins as f64 / (2 * pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub summary: ClassificationSummary,
    /// Empty where the class has no positives or no negatives.
    pub roc: Vec<Vec<(f64, f64)>>,
    pub auc: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn from_records(records: &[PredictionRecord], class_names: &[String]) -> Result<Self> {
        let k = class_names.len();
        let confusion = confusion_matrix(records, k)?;
        let summary = precision_recall_f1(&confusion)?;
        let mut roc = Vec::with_capacity(k);
        let mut auc = Vec::with_capacity(k);
        for c in 0..k {
            match roc_curve(records, c) {
                Ok(curve) => {
                    auc.push(Some(auc_trapezoid(&curve)?));
                    roc.push(curve);
                }
                Err(Error::DegenerateInput(_)) => {
                    auc.push(None);
                    roc.push(Vec::new());
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            class_names: class_names.to_vec(),
            confusion,
            summary,
            roc,
            auc,
        })
    }
}

/// `x` rounded half-up to two decimals. The value is first printed to ten
/// places so binary representation error cannot flip a tie.
pub fn round2(x: f64) -> String {
    let s = format!("{:.10}", x.abs());
    let (int, frac) = s.split_once('.').expect("fixed-point format");
    let mut cents: u64 = int.parse::<u64>().expect("digits") * 100 + frac[..2].parse::<u64>().expect("digits");
    if frac.as_bytes()[2] >= b'5' {
        cents += 1;
    }
    let sign = if x < 0.0 && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}

/// Fixed-width table with per-class rows, then accuracy, macro and weighted
/// averages, then per-class AUC.
pub fn render_report(report: &MetricsReport) -> String {
    let name_w = report
        .class_names
        .iter()
        .map(|n| n.chars().count())
        .chain(["Weighted Avg".len(), "Class".len()])
        .max()
        .unwrap_or(12);
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}", "Class", "Precision", "Recall", "F1-Score", "Support");
    for (name, m) in report.class_names.iter().zip(&s.per_class) {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}",
            name,
            round2(m.precision),
            round2(m.recall),
            round2(m.f1),
            m.support
        );
    }
    let _ = writeln!(out, "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}", "Accuracy", "", "", round2(s.accuracy), s.total);
    for (label, a) in [("Macro Avg", &s.macro_avg), ("Weighted Avg", &s.weighted_avg)] {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}",
            label,
            round2(a.precision),
            round2(a.recall),
            round2(a.f1),
            s.total
        );
    }
    out.push('\n');
    let _ = writeln!(out, "{:<name_w$}  {:>9}", "ROC", "AUC");
    for (name, auc) in report.class_names.iter().zip(&report.auc) {
        let cell = auc.map_or_else(|| String::from("n/a"), round2);
        let _ = writeln!(out, "{:<name_w$}  {:>9}", name, cell);
    }
    out
}

#[cfg(test)]
mod tests;
