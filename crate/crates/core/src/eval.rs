//! Accuracy, the random baseline, and the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskInstance;
use crate::reliability::mean_std;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for instance {0:?}")]
    MissingPrediction(String),
    #[error("nothing to evaluate")]
    Empty,
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Fraction of gold instances whose predicted label matches.
pub fn accuracy(predictions: &BTreeMap<String, u8>, gold: &[TaskInstance]) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0usize;
    for inst in gold {
        let p = predictions
            .get(&inst.instance_id)
            .ok_or_else(|| EvalError::MissingPrediction(inst.instance_id.clone()))?;
        correct += (*p == inst.label) as usize;
    }
    Ok(correct as f64 / gold.len() as f64)
}

/// A fair coin per instance, drawn in input order.
pub fn random_baseline(instances: &[TaskInstance], seed: u64) -> BTreeMap<String, u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances
        .iter()
        .map(|i| (i.instance_id.clone(), rng.gen_bool(0.5) as u8))
        .collect()
}

pub fn predictions_from(instances: &[TaskInstance], labels: &[u8]) -> BTreeMap<String, u8> {
    instances
        .iter()
        .zip(labels)
        .map(|(i, &l)| (i.instance_id.clone(), l))
        .collect()
}

/// Writes `instanceId,label` rows ordered by instance id.
pub fn write_predictions_csv<W: Write>(out: &mut W, predictions: &BTreeMap<String, u8>) -> io::Result<()> {
    writeln!(out, "instanceId,label")?;
    for (id, label) in predictions {
        writeln!(out, "{id},{label}")?;
    }
    Ok(())
}

pub fn parse_predictions_csv(content: &str) -> Result<BTreeMap<String, u8>, EvalError> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "instanceId,label" => {}
        _ => {
            return Err(EvalError::Parse {
                line: 1,
                message: "expected header `instanceId,label`".into(),
            })
        }
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| EvalError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let (id, label) = line.rsplit_once(',').ok_or_else(|| err("expected two columns"))?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(err("label must be 0 or 1")),
        };
        if out.insert(id.to_string(), label).is_some() {
            return Err(err("duplicate instance id"));
        }
    }
    Ok(out)
}

pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<String, u8>, EvalError> {
    let content = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_predictions_csv(&content)
}

/// Per-run accuracies of one approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub approach: String,
    #[serde(default)]
    pub dev: Vec<f64>,
    #[serde(default)]
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation; 0 for a single run.
    pub std: f64,
}

impl RunReport {
    pub fn new(approach: &str, dev: Vec<f64>, test: Vec<f64>) -> Self {
        RunReport {
            approach: approach.to_string(),
            dev,
            test,
        }
    }

    pub fn dev_summary(&self) -> Option<SplitSummary> {
        summarize(&self.dev)
    }

    pub fn test_summary(&self) -> Option<SplitSummary> {
        summarize(&self.test)
    }

    /// Appends another report's runs.
    pub fn merge(&mut self, other: &RunReport) {
        self.dev.extend(&other.dev);
        self.test.extend(&other.test);
    }
}

fn summarize(values: &[f64]) -> Option<SplitSummary> {
    if values.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(values);
    Some(SplitSummary {
        runs: values.len(),
        mean,
        std,
    })
}

/// Fixed human test-set accuracies shown as reference rows.
pub const HUMAN_REFERENCE: [(&str, f64, f64); 2] = [
    ("Human average", 0.798, 0.162),
    ("Human w/ training in reasoning", 0.909, 0.114),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub approach: String,
    pub reference: bool,
    pub dev: Option<SplitSummary>,
    pub test: Option<SplitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub std: String,
}

/// Builds the table: reference rows first, then one row per approach in
/// name order. Reports sharing a name are merged.
pub fn report(runs: &[RunReport]) -> Report {
    let mut rows: Vec<ReportRow> = HUMAN_REFERENCE
        .iter()
        .map(|&(name, mean, std)| ReportRow {
            approach: name.to_string(),
            reference: true,
            dev: None,
            test: Some(SplitSummary { runs: 0, mean, std }),
        })
        .collect();
    let mut merged: BTreeMap<&str, RunReport> = BTreeMap::new();
    for r in runs {
        merged
            .entry(r.approach.as_str())
            .and_modify(|m| m.merge(r))
            .or_insert_with(|| r.clone());
    }
    rows.extend(merged.values().map(|r| ReportRow {
        approach: r.approach.clone(),
        reference: false,
        dev: r.dev_summary(),
        test: r.test_summary(),
    }));
    Report {
        rows,
        std: "population".into(),
    }
}

fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        let cell = |s: &Option<SplitSummary>| match s {
            Some(s) => (fmt3(s.mean), fmt3(s.std)),
            None => ("-".to_string(), String::new()),
        };
        let width = self
            .rows
            .iter()
            .map(|r| r.approach.len() + if r.reference { 12 } else { 0 })
            .max()
            .unwrap_or(0)
            .max("Approach".len());
        let mut out = String::new();
        writeln!(out, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>5}", "Approach", "Dev", "(±)", "Test", "(±)").unwrap();
        for r in &self.rows {
            let name = if r.reference {
                format!("{} (reference)", r.approach)
            } else {
                r.approach.clone()
            };
            let (dm, ds) = cell(&r.dev);
            let (tm, ts) = cell(&r.test);
            writeln!(out, "{name:<width$}  {dm:>5}  {ds:>5}  {tm:>5}  {ts:>5}").unwrap();
        }
        out.push_str("± is the population standard deviation over runs.\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, label: u8) -> TaskInstance {
        TaskInstance {
            instance_id: id.into(),
            warrant0: "a".into(),
            warrant1: "b".into(),
            label,
            reason: "r".into(),
            claim: "c".into(),
            debate_title: "t".into(),
            debate_info: "i".into(),
            debate_id: "t".into(),
        }
    }

    #[test]
    fn accuracy_cases() {
        let gold: Vec<_> = (0..4).map(|i| inst(&format!("g{i}"), (i % 2) as u8)).collect();
        let right: BTreeMap<_, _> = gold.iter().map(|g| (g.instance_id.clone(), g.label)).collect();
        let flipped: BTreeMap<_, _> = right.iter().map(|(k, v)| (k.clone(), 1 - v)).collect();
        assert_eq!(accuracy(&right, &gold).unwrap(), 1.0);
        assert_eq!(accuracy(&flipped, &gold).unwrap(), 0.0);
        let mut three = right.clone();
        three.insert("g0".into(), 1);
        assert_eq!(accuracy(&three, &gold).unwrap(), 0.75);
        let mut missing = right.clone();
        missing.remove("g2");
        assert!(matches!(accuracy(&missing, &gold), Err(EvalError::MissingPrediction(id)) if id == "g2"));
    }

    #[test]
    fn random_baseline_is_seeded() {
        let gold: Vec<_> = (0..50).map(|i| inst(&format!("g{i}"), 0)).collect();
        assert_eq!(random_baseline(&gold, 3), random_baseline(&gold, 3));
        assert_ne!(random_baseline(&gold, 3), random_baseline(&gold, 4));
    }

    #[test]
    fn report_rows_and_std() {
        let r = report(&[RunReport::new("B", vec![0.5, 0.6, 0.7], vec![0.5]), RunReport::new("A", vec![0.4], vec![])]);
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[2].approach, "A");
        assert_eq!(r.rows[2].dev.unwrap().std, 0.0);
        let b = r.rows[3].dev.unwrap();
        assert!((b.mean - 0.6).abs() < 1e-12);
        assert_eq!(fmt3(b.std), ".082");
        let text = r.to_text();
        assert!(text.contains("Human average (reference)"));
        let row_b: Vec<&str> = text.lines().find(|l| l.starts_with("B ")).unwrap().split_whitespace().collect();
        assert_eq!(row_b, ["B", ".600", ".082", ".500", ".000"]);
    }

    #[test]
    fn empty_report_has_reference_rows_only() {
        let r = report(&[]);
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.reference));
        assert_eq!(r.to_text().lines().count(), 4);
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn predictions_csv_round_trip() {
        let p = BTreeMap::from([("a".to_string(), 1u8), ("b,c".to_string(), 0u8)]);
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &p).unwrap();
        assert_eq!(parse_predictions_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
        assert!(parse_predictions_csv("instanceId,label\nx,2\n").is_err());
        assert!(parse_predictions_csv("id,label\n").is_err());
    }
}
