//! Inter-annotator agreement: Cohen's kappa, Krippendorff's alpha for
//! nominal data and the unitizing alpha for span annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crowd::WorkerResponse;

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("label series have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    /// Both raters used one and the same label everywhere, so chance
    /// agreement is 1 and kappa is 0/0.
    #[error("kappa is undefined: expected agreement is 1")]
    UndefinedKappa,
    #[error("nothing pairable: no item has two or more values")]
    NothingPairable,
    #[error("alpha is undefined: expected disagreement is 0")]
    UndefinedAlpha,
    #[error("continuum {doc:?}: {message}")]
    BadContinuum { doc: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Two raters' labels over the same ordered items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeriesPair {
    pub items: Vec<String>,
    pub labels_a: Vec<String>,
    pub labels_b: Vec<String>,
}

impl LabelSeriesPair {
    pub fn new(items: Vec<String>, labels_a: Vec<String>, labels_b: Vec<String>) -> Result<Self, AgreementError> {
        if labels_a.len() != labels_b.len() {
            return Err(AgreementError::LengthMismatch(labels_a.len(), labels_b.len()));
        }
        if items.len() != labels_a.len() {
            return Err(AgreementError::LengthMismatch(items.len(), labels_a.len()));
        }
        Ok(LabelSeriesPair { items, labels_a, labels_b })
    }

    /// Pairs the labels of two item maps over the items present in both.
    pub fn from_maps(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Self {
        let mut pair = LabelSeriesPair {
            items: Vec::new(),
            labels_a: Vec::new(),
            labels_b: Vec::new(),
        };
        for (item, la) in a {
            if let Some(lb) = b.get(item) {
                pair.items.push(item.clone());
                pair.labels_a.push(la.clone());
                pair.labels_b.push(lb.clone());
            }
        }
        pair
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Cohen's kappa with chance agreement from each rater's own marginals.
pub fn cohen_kappa(pair: &LabelSeriesPair) -> Result<f64, AgreementError> {
    let n = pair.len();
    if n == 0 {
        return Err(AgreementError::Empty);
    }
    let mut marg_a: BTreeMap<&str, u64> = BTreeMap::new();
    let mut marg_b: BTreeMap<&str, u64> = BTreeMap::new();
    let mut agree = 0u64;
    for (a, b) in pair.labels_a.iter().zip(&pair.labels_b) {
        *marg_a.entry(a).or_default() += 1;
        *marg_b.entry(b).or_default() += 1;
        if a == b {
            agree += 1;
        }
    }
    let n = n as u64;
    let chance: u64 = marg_a
        .iter()
        .map(|(label, ca)| ca * marg_b.get(label).copied().unwrap_or(0))
        .sum();
    if chance == n * n {
        return Err(AgreementError::UndefinedKappa);
    }
    if agree == n {
        return Ok(1.0);
    }
    let nf = n as f64;
    let p_o = agree as f64 / nf;
    let p_e = chance as f64 / (nf * nf);
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Krippendorff's alpha with the nominal metric. Units are items, values are
/// the response labels; items with a single response are not pairable and
/// contribute nothing.
pub fn krippendorff_alpha_nominal(responses: &[WorkerResponse]) -> Result<f64, AgreementError> {
    let mut units: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for r in responses {
        *units
            .entry(r.item_id.as_str())
            .or_default()
            .entry(r.label.as_str())
            .or_default() += 1;
    }
    alpha_from_units(units.values())
}

/// Nominal alpha from per-unit value counts.
pub fn alpha_from_units<'a, I>(units: I) -> Result<f64, AgreementError>
where
    I: IntoIterator<Item = &'a BTreeMap<&'a str, u64>>,
{
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    let mut observed = 0.0;
    let mut n = 0.0;
    for unit in units {
        let m: u64 = unit.values().sum();
        if m < 2 {
            continue;
        }
        let m = m as f64;
        let same: f64 = unit.values().map(|&c| (c * c) as f64).sum();
        observed += (m * m - same) / (m - 1.0);
        n += m;
        for (&value, &c) in unit {
            *totals.entry(value).or_default() += c as f64;
        }
    }
    if n == 0.0 {
        return Err(AgreementError::NothingPairable);
    }
    let expected = n * n - totals.values().map(|c| c * c).sum::<f64>();
    if expected == 0.0 {
        return Err(AgreementError::UndefinedAlpha);
    }
    if observed == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// A document with each annotator's relevant spans, as half-open token
/// offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuum {
    pub doc_id: String,
    pub length: usize,
    pub unitizations: BTreeMap<String, Vec<(usize, usize)>>,
}

impl Continuum {
    fn check(&self) -> Result<(), AgreementError> {
        let bad = |message: String| AgreementError::BadContinuum {
            doc: self.doc_id.clone(),
            message,
        };
        if self.unitizations.len() < 2 {
            return Err(bad(format!("{} annotator(s), need at least 2", self.unitizations.len())));
        }
        for (annotator, spans) in &self.unitizations {
            let mut prev_end = 0;
            for &(start, end) in spans {
                if start >= end || end > self.length {
                    return Err(bad(format!(
                        "annotator {annotator:?} span [{start}, {end}) outside [0, {})",
                        self.length
                    )));
                }
                if start < prev_end {
                    return Err(bad(format!(
                        "annotator {annotator:?} spans overlap or are unsorted at [{start}, {end})"
                    )));
                }
                prev_end = end;
            }
        }
        Ok(())
    }

    /// The annotator's relevant units and the gaps between them, covering
    /// the whole continuum.
    fn segments(&self, annotator: &str) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut pos = 0;
        for &(start, end) in &self.unitizations[annotator] {
            if start > pos {
                out.push(Segment { begin: pos, len: start - pos, relevant: false });
            }
            out.push(Segment { begin: start, len: end - start, relevant: true });
            pos = end;
        }
        if pos < self.length {
            out.push(Segment { begin: pos, len: self.length - pos, relevant: false });
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    begin: usize,
    len: usize,
    relevant: bool,
}

fn unit_distance(g: Segment, h: Segment) -> f64 {
    let (bg, lg, bh, lh) = (g.begin as f64, g.len as f64, h.begin as f64, h.len as f64);
    let offset = bg - bh;
    match (g.relevant, h.relevant) {
        (true, true) if -lg < offset && offset < lh => offset.powi(2) + (bg + lg - bh - lh).powi(2),
        (true, false) if 0.0 <= offset && offset <= lh - lg => lg * lg,
        (false, true) if 0.0 <= -offset && -offset <= lg - lh => lh * lh,
        _ => 0.0,
    }
}

/// Krippendorff's unitizing alpha for a single "relevant" category.
///
/// Each annotator's continuum splits into relevant units and gaps. Observed
/// disagreement sums the squared non-overlap of every pair of segments from
/// two different annotators on the same document; expected disagreement pools
/// unit and gap lengths over all documents, with `L` the summed length.
pub fn krippendorff_alpha_unitized(continua: &[Continuum]) -> Result<f64, AgreementError> {
    let Some(first) = continua.first() else {
        return Err(AgreementError::Empty);
    };
    let m = first.unitizations.len();
    for c in continua {
        c.check()?;
        if c.unitizations.len() != m {
            return Err(AgreementError::BadContinuum {
                doc: c.doc_id.clone(),
                message: format!("{} annotators, expected {m} as in the first continuum", c.unitizations.len()),
            });
        }
    }
    let total_len: usize = continua.iter().map(|c| c.length).sum();
    if total_len == 0 {
        return Err(AgreementError::Empty);
    }

    let mut observed = 0.0;
    let mut units = Vec::new();
    let mut gaps = Vec::new();
    for c in continua {
        let per_annotator: Vec<Vec<Segment>> = c.unitizations.keys().map(|a| c.segments(a)).collect();
        for (i, segs_i) in per_annotator.iter().enumerate() {
            for (j, segs_j) in per_annotator.iter().enumerate() {
                if i == j {
                    continue;
                }
                for &g in segs_i {
                    for &h in segs_j {
                        observed += unit_distance(g, h);
                    }
                }
            }
            for s in segs_i {
                if s.relevant {
                    units.push(s.len as f64);
                } else {
                    gaps.push(s.len as f64);
                }
            }
        }
    }

    let l = total_len as f64;
    let mf = m as f64;
    let d_o = observed / (mf * (mf - 1.0) * l * l);

    let n_units = units.len() as f64;
    let mut numerator = 0.0;
    for &lg in &units {
        let within = (n_units - 1.0) / 3.0 * (2.0 * lg.powi(3) - 3.0 * lg * lg + lg);
        let inside_gaps: f64 = gaps.iter().filter(|&&lh| lh >= lg).map(|&lh| lh - lg + 1.0).sum();
        numerator += within + lg * lg * inside_gaps;
    }
    let numerator = 2.0 / l * numerator;
    let denominator = mf * l * (mf * l - 1.0) - units.iter().map(|lg| lg * (lg - 1.0)).sum::<f64>();
    let d_e = numerator / denominator;
    if d_e == 0.0 || !d_e.is_finite() {
        return Err(AgreementError::UndefinedAlpha);
    }
    if d_o == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(rename_all = "camelCase")]
struct SpanLine {
    doc_id: String,
    length: usize,
    annotator: String,
    spans: Vec<(usize, usize)>,
}

/// Parses span JSONL, one line per (document, annotator), into continua
/// ordered by document id.
pub fn parse_span_jsonl(content: &str) -> Result<Vec<Continuum>, AgreementError> {
    let mut docs: BTreeMap<String, Continuum> = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: SpanLine = serde_json::from_str(raw).map_err(|e| AgreementError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let doc = docs.entry(line.doc_id.clone()).or_insert_with(|| Continuum {
            doc_id: line.doc_id.clone(),
            length: line.length,
            unitizations: BTreeMap::new(),
        });
        if doc.length != line.length {
            return Err(AgreementError::Parse {
                line: idx + 1,
                message: format!("document {:?} length {} differs from {}", line.doc_id, line.length, doc.length),
            });
        }
        if doc.unitizations.insert(line.annotator.clone(), line.spans).is_some() {
            return Err(AgreementError::Parse {
                line: idx + 1,
                message: format!("annotator {:?} repeated for document {:?}", line.annotator, line.doc_id),
            });
        }
    }
    Ok(docs.into_values().collect())
}

pub fn read_span_jsonl(path: &Path) -> Result<Vec<Continuum>, AgreementError> {
    let content = fs::read_to_string(path).map_err(|e: io::Error| AgreementError::Io(format!("{}: {e}", path.display())))?;
    parse_span_jsonl(&content)
}

/// Labels of the two workers with the most shared items, as a kappa pair.
/// Used when agreement is requested on raw responses.
pub fn busiest_worker_pair(responses: &[WorkerResponse]) -> Option<LabelSeriesPair> {
    let mut by_worker: BTreeMap<&str, BTreeMap<String, String>> = BTreeMap::new();
    for r in responses {
        by_worker
            .entry(r.worker_id.as_str())
            .or_default()
            .insert(r.item_id.clone(), r.label.clone());
    }
    let workers: Vec<&str> = by_worker.keys().copied().collect();
    let mut best: Option<(usize, LabelSeriesPair)> = None;
    for (i, a) in workers.iter().enumerate() {
        for b in &workers[i + 1..] {
            let pair = LabelSeriesPair::from_maps(&by_worker[a], &by_worker[b]);
            if best.as_ref().map_or(true, |(n, _)| pair.len() > *n) {
                best = Some((pair.len(), pair));
            }
        }
    }
    best.filter(|(n, _)| *n > 0).map(|(_, p)| p)
}

/// Distinct labels in either series.
pub fn label_set(pair: &LabelSeriesPair) -> BTreeSet<&str> {
    pair.labels_a.iter().chain(&pair.labels_b).map(String::as_str).collect()
}
