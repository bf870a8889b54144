//! CSV artifacts: epoch history, predictions, ROC points, confusion counts.
//!
//! Floats are written in shortest round-trip form, so a value read back is
//! bitwise the value written.

use std::fmt::Write as _;
use std::path::Path;

use hgtnet_core::metrics::{ConfusionMatrix, PredictionRecord};
use hgtnet_core::train::EpochRecord;

use crate::error::{HgtError, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

pub fn history(records: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in records {
        writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc).unwrap();
    }
    s
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn predictions(records: &[PredictionRecord]) -> String {
    let k = records.first().map_or(0, |r| r.scores.len());
    let mut s = String::from("sample_id,true_label");
    for c in 0..k {
        write!(s, ",score_{c}").unwrap();
    }
    s.push('\n');
    for r in records {
        write!(s, "{},{}", quote(&r.sample_id), r.true_label).unwrap();
        for v in &r.scores {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Split one line into fields, honouring double-quoted fields.
fn fields(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match (quoted, c) {
            (true, '"') if chars.peek() == Some(&'"') => {
                chars.next();
                cur.push('"');
            }
            (true, '"') => quoted = false,
            (true, c) => cur.push(c),
            (false, '"') if cur.is_empty() => quoted = true,
            (false, ',') => out.push(std::mem::take(&mut cur)),
            (false, c) => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated quoted field".into());
    }
    out.push(cur);
    Ok(out)
}

/// Parse a predictions file. `k`, when given, must match the score columns.
pub fn parse_predictions(path: &Path, text: &str, k: Option<usize>) -> Result<Vec<PredictionRecord>> {
    let err = |line: usize, msg: String| HgtError::Csv { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let head = fields(header).map_err(|m| err(1, m))?;
    if head.len() < 3 || head[0] != "sample_id" || head[1] != "true_label" {
        return Err(err(1, "header must be `sample_id,true_label,score_0,...`".into()));
    }
    let cols = head.len() - 2;
    if let Some(k) = k.filter(|&k| k != cols) {
        return Err(err(1, format!("header has {cols} score columns, expected {k}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f = fields(line).map_err(|m| err(n, m))?;
        if f.len() != cols + 2 {
            return Err(err(n, format!("expected {} fields, found {}", cols + 2, f.len())));
        }
        let true_label: usize = f[1].trim().parse().map_err(|_| err(n, format!("bad label `{}`", f[1])))?;
        if true_label >= cols {
            return Err(err(n, format!("label {true_label} out of range for {cols} classes")));
        }
        let scores = f[2..]
            .iter()
            .map(|v| match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(err(n, format!("bad score `{v}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PredictionRecord { sample_id: f[0].clone(), true_label, scores });
    }
    if out.is_empty() {
        return Err(err(1, "no prediction rows".into()));
    }
    Ok(out)
}

pub fn roc(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in points {
        writeln!(s, "{x},{y}").unwrap();
    }
    s
}

/// Rows are true classes, columns predicted classes.
pub fn confusion(cm: &ConfusionMatrix, names: &[String]) -> String {
    let mut s = String::from("true\\predicted");
    for n in names {
        write!(s, ",{}", quote(n)).unwrap();
    }
    s.push('\n');
    for (a, n) in names.iter().enumerate() {
        s.push_str(&quote(n));
        for p in 0..names.len() {
            write!(s, ",{}", cm.get(a, p)).unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip_bitwise() {
        let recs = vec![
            PredictionRecord { sample_id: "a,\"b\"".into(), true_label: 1, scores: vec![0.1 + 0.2, 1.0 / 3.0] },
            PredictionRecord { sample_id: "c".into(), true_label: 0, scores: vec![1e-300, 5e-324] },
        ];
        let back = parse_predictions(Path::new("p.csv"), &predictions(&recs), Some(2)).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let p = Path::new("p.csv");
        let text = "sample_id,true_label,score_0,score_1\na,0,0.5,0.5\nb,1,0.5\n";
        let e = parse_predictions(p, text, None).unwrap_err();
        assert!(e.to_string().contains("p.csv:3"), "{e}");
        let e = parse_predictions(p, "sample_id,true_label,score_0,score_1\na,2,0.5,0.5\n", None).unwrap_err();
        assert!(e.to_string().contains(":2"), "{e}");
        assert!(parse_predictions(p, "sample_id,true_label,score_0\nx,0,nan\n", None).is_err());
        assert!(parse_predictions(p, "sample_id,true_label,score_0\n", Some(3)).is_err());
    }
}
