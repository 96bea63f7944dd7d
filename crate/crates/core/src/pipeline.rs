//! The eight-step warrant reconstruction workflow.
//!
//! Each step consumes the records that survived the previous step plus the
//! crowd responses collected for it, and emits the records that pass on to
//! the next step together with a [`StepReport`]. Records keep their id for
//! their whole life, so every stage-`s` record has a stage-`s-1` ancestor.
//!
//! | step | responses                          | effect                                                   |
//! |------|------------------------------------|----------------------------------------------------------|
//! | 1    | stance, optional `:sarcastic`      | keep stance-taking comments, orient `claim`, flag sarcasm |
//! | 2    | unit spans `0-2,5-6`               | attach majority reason spans                             |
//! | 3    | gist text or `#wrong_reason`       | attach gist, drop wrong reasons                          |
//! | 4    | `original` / `opposing` / `both`   | keep reasons implying the original claim                 |
//! | 5    | alternative warrant or `#impossible` | attach AW, drop impossible ones                        |
//! | 6    | `reason:<0-2>` / `distractor:<0-2>`| keep correctly validated reasons, attach mean logic score |
//! | 7    | warrant text                       | logic-score filter, attach W                              |
//! | 8    | `single` / `both` / `neither`      | keep single-explanation tuples, ties go to the disputed queue |
//!
//! Records without any response for a step are dropped with the reason
//! `no responses`. Under majority aggregation a tied vote drops the record
//! with the reason `tie` in steps 1, 4 and 6 and marks it disputed in step 8.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Debate, TaskInstance};
use crate::crowd::{
    mace_fit, majority_vote, threshold_predictions, AggregationConfig, CrowdError, ResponseSet, WorkerResponse,
};
use crate::text::{tokenize, Segmenter, SentenceSegmenter, WordVectors};

pub const FIRST_STAGE: u8 = 1;
pub const LAST_STAGE: u8 = 8;
pub const DEFAULT_LOGIC_THRESHOLD: f64 = 0.68;
pub const LOGIC_SCORE_MAX: f64 = 2.0;

pub const FLAG_WRONG_REASON: &str = "#wrong_reason";
pub const FLAG_IMPOSSIBLE: &str = "#impossible";
pub const NO_RESPONSES: &str = "no responses";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {0} is outside 1..=8")]
    BadStage(u8),
    #[error("record {record:?} is at stage {found}, step {step} expects stage {expected}")]
    StageOutOfOrder {
        record: String,
        found: u8,
        expected: u8,
        step: u8,
    },
    #[error("response for unknown record {0:?}")]
    UnknownRecord(String),
    #[error("duplicate record id {0:?}")]
    DuplicateRecord(String),
    #[error("record {record:?}: {message}")]
    Schema { record: String, message: String },
    #[error("record {record:?}, worker {worker:?}: {message}")]
    BadResponse {
        record: String,
        worker: String,
        message: String,
    },
    #[error("record {0:?} has no logic score")]
    MissingLogicScore(String),
    #[error("distractor pool is empty for record {0:?}")]
    EmptyPool(String),
    #[error("candidate {candidate:?} is not from debate {debate:?}")]
    ForeignDebate { candidate: String, debate: String },
    #[error("target {0:?} is part of its own distractor pool")]
    TargetInPool(String),
    #[error("resolution for record {0:?} which is not disputed")]
    NotDisputed(String),
    #[error("record {record:?} refers to unknown debate {debate:?}")]
    UnknownDebate { record: String, debate: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Crowd(#[from] CrowdError),
}

fn file_err(path: &Path) -> impl Fn(String) -> PipelineError + '_ {
    move |message| PipelineError::File {
        path: path.display().to_string(),
        message,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Claim,
    OpposingClaim,
    Neutral,
    None,
}

impl Stance {
    pub fn parse(raw: &str) -> Option<Stance> {
        match raw {
            "claim" => Some(Stance::Claim),
            "opposing_claim" => Some(Stance::OpposingClaim),
            "neutral" => Some(Stance::Neutral),
            "none" => Some(Stance::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Claim => "claim",
            Stance::OpposingClaim => "opposing_claim",
            Stance::Neutral => "neutral",
            Stance::None => "none",
        }
    }

    pub fn takes_stance(self) -> bool {
        matches!(self, Stance::Claim | Stance::OpposingClaim)
    }
}

/// One argument on its way through the workflow.
///
/// Stage 0 records are the sampled comments with the debate's two explicit
/// claims. After step 1, `claim` is the claim the comment argues for and
/// `opposing_claim` its counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineRecord {
    pub record_id: String,
    pub debate_id: String,
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opposing_claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance_label: Option<Stance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sarcastic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_warrant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warrant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disputed: Option<bool>,
}

impl PipelineRecord {
    pub fn new(record_id: &str, debate_id: &str, claim: &str, opposing_claim: &str) -> Self {
        PipelineRecord {
            record_id: record_id.into(),
            debate_id: debate_id.into(),
            stage: 0,
            text: None,
            claim: Some(claim.into()),
            opposing_claim: Some(opposing_claim.into()),
            stance_label: None,
            sarcastic: None,
            reason_spans: None,
            gist: None,
            alternative_warrant: None,
            logic_score: None,
            warrant: None,
            disputed: None,
        }
    }

    /// Checks that every field required at the record's stage is present.
    pub fn check_schema(&self) -> Result<(), PipelineError> {
        let missing = |field: &str| PipelineError::Schema {
            record: self.record_id.clone(),
            message: format!("stage {} requires {field}", self.stage),
        };
        if self.stage > LAST_STAGE {
            return Err(PipelineError::Schema {
                record: self.record_id.clone(),
                message: format!("stage {} beyond {LAST_STAGE}", self.stage),
            });
        }
        let s = self.stage;
        let required: [(u8, &str, bool); 9] = [
            (0, "claim", self.claim.is_some()),
            (0, "opposingClaim", self.opposing_claim.is_some()),
            (1, "stanceLabel", self.stance_label.is_some()),
            (1, "sarcastic", self.sarcastic.is_some()),
            (2, "reasonSpans", self.reason_spans.is_some()),
            (3, "gist", self.gist.is_some()),
            (5, "alternativeWarrant", self.alternative_warrant.is_some()),
            (6, "logicScore", self.logic_score.is_some()),
            (7, "warrant", self.warrant.is_some()),
        ];
        for (from, field, present) in required {
            if s >= from && !present {
                return Err(missing(field));
            }
        }
        if s >= LAST_STAGE && self.disputed.is_none() {
            return Err(missing("disputed"));
        }
        if let Some(score) = self.logic_score {
            if !(0.0..=LOGIC_SCORE_MAX).contains(&score) {
                return Err(PipelineError::Schema {
                    record: self.record_id.clone(),
                    message: format!("logic score {score} outside [0, {LOGIC_SCORE_MAX}]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepReport {
    pub stage: u8,
    pub input_count: usize,
    pub output_count: usize,
    pub dropped_count: usize,
    pub drop_reasons: BTreeMap<String, usize>,
    /// Counts of notable but kept records, e.g. `sarcastic` or `disputed`.
    #[serde(default)]
    pub flagged: BTreeMap<String, usize>,
}

impl StepReport {
    fn new(stage: u8, input_count: usize) -> Self {
        StepReport {
            stage,
            input_count,
            ..Default::default()
        }
    }

    fn drop(&mut self, reason: &str) {
        self.dropped_count += 1;
        *self.drop_reasons.entry(reason.to_string()).or_default() += 1;
    }

    fn flag(&mut self, what: &str) {
        *self.flagged.entry(what.to_string()).or_default() += 1;
    }

    pub fn balances(&self) -> bool {
        self.input_count == self.output_count + self.dropped_count
            && self.drop_reasons.values().sum::<usize>() == self.dropped_count
    }
}

/// How categorical responses are turned into one label per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Aggregator {
    Majority,
    /// MACE; records outside the kept fraction are dropped as `low confidence`.
    Mace {
        config: AggregationConfig,
        keep_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Categorical,
    Spans,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLabels {
    pub kind: LabelKind,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub modifiers: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<(f64, f64)>,
}

/// Response label sets for every step, stored as `labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub stages: BTreeMap<u8, StageLabels>,
}

impl Default for LabelManifest {
    fn default() -> Self {
        let cat = |labels: &[&str], modifiers: &[&str], score: Option<(f64, f64)>| StageLabels {
            kind: LabelKind::Categorical,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            modifiers: modifiers.iter().map(|s| s.to_string()).collect(),
            flags: Vec::new(),
            score_range: score,
        };
        let text = |flags: &[&str]| StageLabels {
            kind: LabelKind::Text,
            labels: Vec::new(),
            modifiers: Vec::new(),
            flags: flags.iter().map(|s| s.to_string()).collect(),
            score_range: None,
        };
        let mut stages = BTreeMap::new();
        stages.insert(1, cat(&["claim", "neutral", "none", "opposing_claim"], &["sarcastic"], None));
        stages.insert(
            2,
            StageLabels {
                kind: LabelKind::Spans,
                labels: Vec::new(),
                modifiers: Vec::new(),
                flags: Vec::new(),
                score_range: None,
            },
        );
        stages.insert(3, text(&[FLAG_WRONG_REASON]));
        stages.insert(4, cat(&["both", "opposing", "original"], &[], None));
        stages.insert(5, text(&[FLAG_IMPOSSIBLE]));
        stages.insert(6, cat(&["distractor", "reason"], &[], Some((0.0, LOGIC_SCORE_MAX))));
        stages.insert(7, text(&[]));
        stages.insert(8, cat(&["both", "neither", "single"], &[], None));
        LabelManifest { stages }
    }
}

impl LabelManifest {
    pub fn stage(&self, stage: u8) -> StageLabels {
        self.stages
            .get(&stage)
            .cloned()
            .unwrap_or_else(|| LabelManifest::default().stages[&stage].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub aggregator: Aggregator,
    pub logic_threshold: f64,
    pub manifest: LabelManifest,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            aggregator: Aggregator::Majority,
            logic_threshold: DEFAULT_LOGIC_THRESHOLD,
            manifest: LabelManifest::default(),
        }
    }
}

struct Parsed<'a> {
    response: &'a WorkerResponse,
    value: String,
}

fn parse_categorical<'a>(r: &'a WorkerResponse, spec: &StageLabels) -> Result<Parsed<'a>, PipelineError> {
    let bad = |message: String| PipelineError::BadResponse {
        record: r.item_id.clone(),
        worker: r.worker_id.clone(),
        message,
    };
    let (value, modifier) = match r.label.split_once(':') {
        Some((v, m)) => (v, Some(m)),
        None => (r.label.as_str(), None),
    };
    if !spec.labels.iter().any(|l| l == value) {
        return Err(bad(format!("label {value:?} not in {:?}", spec.labels)));
    }
    if let Some(m) = modifier {
        match spec.score_range {
            Some((lo, hi)) => {
                let score: f64 = m.parse().map_err(|_| bad(format!("score {m:?} is not a number")))?;
                if !(lo..=hi).contains(&score) {
                    return Err(bad(format!("score {score} outside [{lo}, {hi}]")));
                }
            }
            None if !spec.modifiers.iter().any(|x| x == m) => {
                return Err(bad(format!("modifier {m:?} not in {:?}", spec.modifiers)));
            }
            None => {}
        }
    }
    Ok(Parsed {
        response: r,
        value: value.to_string(),
    })
}

/// Runs step `stage` with the default sentence segmenter.
pub fn run_step(
    records: &[PipelineRecord],
    stage: u8,
    responses: &[WorkerResponse],
    config: &PipelineConfig,
) -> Result<(Vec<PipelineRecord>, StepReport), PipelineError> {
    run_step_with(records, stage, responses, config, &SentenceSegmenter)
}

pub fn run_step_with(
    records: &[PipelineRecord],
    stage: u8,
    responses: &[WorkerResponse],
    config: &PipelineConfig,
    segmenter: &dyn Segmenter,
) -> Result<(Vec<PipelineRecord>, StepReport), PipelineError> {
    if !(FIRST_STAGE..=LAST_STAGE).contains(&stage) {
        return Err(PipelineError::BadStage(stage));
    }
    let mut ids = HashSet::new();
    for r in records {
        if r.stage + 1 != stage {
            return Err(PipelineError::StageOutOfOrder {
                record: r.record_id.clone(),
                found: r.stage,
                expected: stage - 1,
                step: stage,
            });
        }
        r.check_schema()?;
        if !ids.insert(r.record_id.as_str()) {
            return Err(PipelineError::DuplicateRecord(r.record_id.clone()));
        }
    }
    let mut by_record: HashMap<&str, Vec<&WorkerResponse>> = HashMap::new();
    for resp in responses {
        if !ids.contains(resp.item_id.as_str()) {
            return Err(PipelineError::UnknownRecord(resp.item_id.clone()));
        }
        by_record.entry(resp.item_id.as_str()).or_default().push(resp);
    }
    for rs in by_record.values_mut() {
        rs.sort_by(|a, b| {
            a.submission_time
                .cmp(&b.submission_time)
                .then_with(|| a.worker_id.cmp(&b.worker_id))
        });
    }

    let spec = config.manifest.stage(stage);
    let mut report = StepReport::new(stage, records.len());
    let mut out = Vec::with_capacity(records.len());

    let (records_in, pre_dropped): (Vec<&PipelineRecord>, Vec<&PipelineRecord>) = if stage == 7 {
        records
            .iter()
            .partition(|r| r.logic_score.unwrap_or(0.0) >= config.logic_threshold)
    } else {
        (records.iter().collect(), Vec::new())
    };
    for _ in &pre_dropped {
        report.drop("logic score below threshold");
    }

    let mut answered = Vec::with_capacity(records_in.len());
    for r in records_in {
        if by_record.get(r.record_id.as_str()).map_or(true, |v| v.is_empty()) {
            report.drop(NO_RESPONSES);
        } else {
            answered.push(r);
        }
    }

    let aggregated = match spec.kind {
        LabelKind::Categorical => {
            let mut parsed: Vec<Parsed<'_>> = Vec::new();
            for r in &answered {
                for resp in &by_record[r.record_id.as_str()] {
                    parsed.push(parse_categorical(resp, &spec)?);
                }
            }
            Some(aggregate_categorical(&parsed, &spec, &config.aggregator)?)
        }
        _ => None,
    };

    for rec in answered {
        let rs = &by_record[rec.record_id.as_str()];
        let mut next = rec.clone();
        next.stage = stage;
        let outcome = match spec.kind {
            LabelKind::Categorical => {
                let agg = aggregated.as_ref().expect("categorical stage aggregates");
                match agg.get(rec.record_id.as_str()) {
                    None => Err("low confidence".to_string()),
                    Some(choice) => apply_categorical(stage, &mut next, choice, rs, &mut report),
                }
            }
            LabelKind::Spans => apply_spans(&mut next, rs, segmenter).map(|_| ()),
            LabelKind::Text => apply_text(stage, &mut next, rs, &spec),
        };
        match outcome {
            Ok(()) => out.push(next),
            Err(reason) => report.drop(&reason),
        }
    }
    report.output_count = out.len();
    debug_assert!(report.balances());
    Ok((out, report))
}

#[derive(Debug, Clone)]
struct Choice {
    label: String,
    /// Majority tie; only set under majority aggregation, except that step 8
    /// always routes majority ties to the disputed queue.
    tie: bool,
    dispute: bool,
}

fn aggregate_categorical(
    parsed: &[Parsed<'_>],
    spec: &StageLabels,
    aggregator: &Aggregator,
) -> Result<HashMap<String, Choice>, PipelineError> {
    let responses: Vec<WorkerResponse> = parsed
        .iter()
        .map(|p| WorkerResponse {
            label: p.value.clone(),
            ..p.response.clone()
        })
        .collect();
    let majority = majority_vote(&responses);
    match aggregator {
        Aggregator::Majority => Ok(majority
            .into_iter()
            .map(|(item, m)| {
                let choice = Choice {
                    label: m.label,
                    tie: m.tie,
                    dispute: m.tie,
                };
                (item, choice)
            })
            .collect()),
        Aggregator::Mace { config, keep_fraction } => {
            if responses.is_empty() {
                return Ok(HashMap::new());
            }
            let set = ResponseSet::new(&responses, Some(&spec.labels))?;
            let model = mace_fit(&set, config)?;
            let kept = threshold_predictions(&model, *keep_fraction)?;
            Ok(kept
                .into_iter()
                .map(|(item, p)| {
                    let dispute = majority.get(&item).is_some_and(|m| m.tie);
                    let choice = Choice {
                        label: p.label,
                        tie: false,
                        dispute,
                    };
                    (item, choice)
                })
                .collect())
        }
    }
}

fn apply_categorical(
    stage: u8,
    rec: &mut PipelineRecord,
    choice: &Choice,
    responses: &[&WorkerResponse],
    report: &mut StepReport,
) -> Result<(), String> {
    if choice.tie && stage != LAST_STAGE {
        return Err("tie".into());
    }
    match stage {
        1 => {
            let stance = Stance::parse(&choice.label).ok_or_else(|| format!("unknown stance {}", choice.label))?;
            if !stance.takes_stance() {
                return Err(stance.as_str().to_string());
            }
            if stance == Stance::OpposingClaim {
                std::mem::swap(&mut rec.claim, &mut rec.opposing_claim);
            }
            let sarcastic_votes = responses
                .iter()
                .filter(|r| r.label.split_once(':').is_some_and(|(_, m)| m == "sarcastic"))
                .count();
            let sarcastic = 2 * sarcastic_votes > responses.len();
            if sarcastic {
                report.flag("sarcastic");
            }
            rec.stance_label = Some(stance);
            rec.sarcastic = Some(sarcastic);
            Ok(())
        }
        4 => {
            if choice.label == "original" {
                Ok(())
            } else {
                Err(choice.label.clone())
            }
        }
        6 => {
            if choice.label != "reason" {
                return Err("distractor chosen".into());
            }
            let scores: Vec<f64> = responses
                .iter()
                .filter_map(|r| r.label.split_once(':').and_then(|(_, s)| s.parse().ok()))
                .collect();
            if scores.is_empty() {
                return Err("no logic score".into());
            }
            rec.logic_score = Some(scores.iter().sum::<f64>() / scores.len() as f64);
            Ok(())
        }
        8 => {
            if choice.dispute {
                report.flag("disputed");
                rec.disputed = Some(true);
                Ok(())
            } else if choice.label == "single" {
                rec.disputed = Some(false);
                Ok(())
            } else {
                Err(choice.label.clone())
            }
        }
        other => Err(format!("stage {other} has no categorical rule")),
    }
}

/// Parses `start-end` unit ranges separated by commas; empty or `none` means
/// no span.
pub fn parse_spans(raw: &str) -> Result<Vec<(usize, usize)>, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "none" {
        return Ok(Vec::new());
    }
    let mut spans = Vec::new();
    for part in raw.split(',') {
        let (s, e) = part
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("span {part:?} is not start-end"))?;
        let s: usize = s.trim().parse().map_err(|_| format!("bad span start {s:?}"))?;
        let e: usize = e.trim().parse().map_err(|_| format!("bad span end {e:?}"))?;
        if s >= e {
            return Err(format!("empty span {s}-{e}"));
        }
        spans.push((s, e));
    }
    spans.sort_unstable();
    Ok(spans)
}

/// Units marked by a strict majority of the responses, merged into maximal
/// runs.
pub fn majority_spans(worker_spans: &[Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
    let n = worker_spans.len();
    let end = worker_spans.iter().flatten().map(|&(_, e)| e).max().unwrap_or(0);
    let mut votes = vec![0usize; end];
    for spans in worker_spans {
        let mut marked = vec![false; end];
        for &(s, e) in spans {
            marked[s..e].iter_mut().for_each(|m| *m = true);
        }
        for (v, m) in votes.iter_mut().zip(marked) {
            *v += m as usize;
        }
    }
    let mut out = Vec::new();
    let mut start = None;
    for (unit, &v) in votes.iter().enumerate() {
        let on = 2 * v > n;
        match (on, start) {
            (true, None) => start = Some(unit),
            (false, Some(s)) => {
                out.push((s, unit));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, end));
    }
    out
}

fn apply_spans(
    rec: &mut PipelineRecord,
    responses: &[&WorkerResponse],
    segmenter: &dyn Segmenter,
) -> Result<(), String> {
    let limit = rec.text.as_deref().map(|t| segmenter.segment(t).len());
    let mut per_worker = Vec::with_capacity(responses.len());
    for r in responses {
        let spans = parse_spans(&r.label).map_err(|m| format!("malformed spans: {m}"))?;
        if let Some(limit) = limit {
            if spans.iter().any(|&(_, e)| e > limit) {
                return Err("spans beyond text".into());
            }
        }
        per_worker.push(spans);
    }
    rec.reason_spans = Some(majority_spans(&per_worker));
    Ok(())
}

fn apply_text(stage: u8, rec: &mut PipelineRecord, responses: &[&WorkerResponse], spec: &StageLabels) -> Result<(), String> {
    let flagged = responses.iter().filter(|r| spec.flags.contains(&r.label)).count();
    let texts: Vec<&str> = responses
        .iter()
        .filter(|r| !spec.flags.contains(&r.label) && !r.label.trim().is_empty())
        .map(|r| r.label.trim())
        .collect();
    if flagged > texts.len() {
        let reason = match stage {
            3 => "wrong reason",
            5 => "impossible",
            _ => "flagged",
        };
        return Err(reason.into());
    }
    let Some(text) = texts.first() else {
        return Err("empty text".into());
    };
    let text = text.to_string();
    match stage {
        3 => rec.gist = Some(text),
        5 => rec.alternative_warrant = Some(text),
        7 => rec.warrant = Some(text),
        other => return Err(format!("stage {other} has no text rule")),
    }
    Ok(())
}

/// Splits records into those with `logic_score >= threshold` and the rest.
pub fn filter_by_logic_score(
    records: &[PipelineRecord],
    threshold: f64,
) -> Result<(Vec<PipelineRecord>, Vec<PipelineRecord>), PipelineError> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        let score = r.logic_score.ok_or_else(|| PipelineError::MissingLogicScore(r.record_id.clone()))?;
        if score >= threshold {
            kept.push(r.clone());
        } else {
            dropped.push(r.clone());
        }
    }
    Ok((kept, dropped))
}

/// Maps a text to a dense vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f64>;
}

impl<F> Embedder for F
where
    F: Fn(&str) -> Vec<f64>,
{
    fn embed(&self, text: &str) -> Vec<f64> {
        self(text)
    }
}

/// Mean of word vectors over the tokens of a text; unknown tokens are
/// skipped and a text without known tokens maps to the zero vector.
#[derive(Debug, Clone, Default)]
pub struct MeanWordEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl MeanWordEmbedder {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Self {
        MeanWordEmbedder { dim, vectors }
    }

    /// Parses `token v1 ... vE` lines.
    pub fn parse(content: &str) -> Result<Self, String> {
        let wv = WordVectors::parse(content)?;
        Ok(MeanWordEmbedder {
            dim: wv.dim,
            vectors: wv.vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let content = fs::read_to_string(path).map_err(|e| file_err(path)(e.to_string()))?;
        Self::parse(&content).map_err(file_err(path))
    }
}

impl Embedder for MeanWordEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for tok in tokenize(text) {
            if let Some(v) = self.vectors.get(&tok) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        sum
    }
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistractorChoice {
    pub record_id: String,
    pub similarity: f64,
    /// Records whose gist embedded to the zero vector (similarity taken as 0).
    pub zero_norm: Vec<String>,
}

/// Picks the pool record whose gist is least similar to the target's gist.
pub fn sample_distractor(
    target: &PipelineRecord,
    pool: &[PipelineRecord],
    embed: &dyn Embedder,
) -> Result<DistractorChoice, PipelineError> {
    if pool.is_empty() {
        return Err(PipelineError::EmptyPool(target.record_id.clone()));
    }
    for c in pool {
        if c.record_id == target.record_id {
            return Err(PipelineError::TargetInPool(target.record_id.clone()));
        }
        if c.debate_id != target.debate_id {
            return Err(PipelineError::ForeignDebate {
                candidate: c.record_id.clone(),
                debate: target.debate_id.clone(),
            });
        }
    }
    let gist = |r: &PipelineRecord| r.gist.clone().unwrap_or_default();
    let target_vec = embed.embed(&gist(target));
    let target_zero = target_vec.iter().all(|x| *x == 0.0);
    let mut zero_norm = Vec::new();
    if target_zero {
        zero_norm.push(target.record_id.clone());
    }
    let mut ordered: Vec<&PipelineRecord> = pool.iter().collect();
    ordered.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut best: Option<(&PipelineRecord, f64)> = None;
    for cand in ordered {
        let v = embed.embed(&gist(cand));
        let sim = match cosine_similarity(&target_vec, &v) {
            Some(s) => s,
            None => {
                if v.iter().all(|x| *x == 0.0) {
                    zero_norm.push(cand.record_id.clone());
                }
                0.0
            }
        };
        if best.map_or(true, |(_, b)| sim < b) {
            best = Some((cand, sim));
        }
    }
    let (rec, similarity) = best.expect("pool is non-empty");
    Ok(DistractorChoice {
        record_id: rec.record_id.clone(),
        similarity,
        zero_norm,
    })
}

/// What the crowd sees in the alternative-warrant validation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationTask {
    pub record_id: String,
    pub opposing_claim: String,
    pub alternative_warrant: String,
    pub reason: String,
    pub distractor_id: String,
    pub distractor_reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskPreparation {
    pub without_pool: Vec<String>,
    pub zero_norm: Vec<String>,
}

/// Builds validation tasks for stage-5 records; distractors come from the
/// same debate.
pub fn prepare_validation_tasks(
    records: &[PipelineRecord],
    embed: &dyn Embedder,
) -> Result<(Vec<ValidationTask>, TaskPreparation), PipelineError> {
    let mut by_debate: BTreeMap<&str, Vec<&PipelineRecord>> = BTreeMap::new();
    for r in records {
        by_debate.entry(r.debate_id.as_str()).or_default().push(r);
    }
    let mut tasks = Vec::new();
    let mut prep = TaskPreparation::default();
    for r in records {
        let pool: Vec<PipelineRecord> = by_debate[r.debate_id.as_str()]
            .iter()
            .filter(|c| c.record_id != r.record_id)
            .map(|c| (*c).clone())
            .collect();
        if pool.is_empty() {
            prep.without_pool.push(r.record_id.clone());
            continue;
        }
        let choice = sample_distractor(r, &pool, embed)?;
        for z in choice.zero_norm {
            if !prep.zero_norm.contains(&z) {
                prep.zero_norm.push(z);
            }
        }
        let distractor = pool.iter().find(|c| c.record_id == choice.record_id).expect("chosen from pool");
        tasks.push(ValidationTask {
            record_id: r.record_id.clone(),
            opposing_claim: r.opposing_claim.clone().unwrap_or_default(),
            alternative_warrant: r.alternative_warrant.clone().unwrap_or_default(),
            reason: r.gist.clone().unwrap_or_default(),
            distractor_id: distractor.record_id.clone(),
            distractor_reason: distractor.gist.clone().unwrap_or_default(),
        });
    }
    prep.zero_norm.sort();
    Ok((tasks, prep))
}

/// An expert decision on a disputed record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resolution {
    pub record_id: String,
    pub accept: bool,
}

/// Applies expert resolutions: accepted records lose the dispute flag,
/// rejected ones are removed. Returns the ids of rejected records.
pub fn apply_resolutions(
    records: &mut Vec<PipelineRecord>,
    resolutions: &[Resolution],
) -> Result<Vec<String>, PipelineError> {
    let mut decisions: HashMap<&str, bool> = HashMap::new();
    for res in resolutions {
        let disputed = records
            .iter()
            .any(|r| r.record_id == res.record_id && r.disputed == Some(true));
        if !disputed {
            return Err(PipelineError::NotDisputed(res.record_id.clone()));
        }
        decisions.insert(res.record_id.as_str(), res.accept);
    }
    let mut rejected = Vec::new();
    records.retain_mut(|r| match decisions.get(r.record_id.as_str()) {
        Some(true) => {
            r.disputed = Some(false);
            true
        }
        Some(false) => {
            rejected.push(r.record_id.clone());
            false
        }
        None => true,
    });
    Ok(rejected)
}

/// Places the correct warrant into slot `slot` and the alternative into the
/// other one. Returns `(warrant0, warrant1, label)`.
pub fn place_warrants(warrant: &str, alternative: &str, slot: u8) -> (String, String, u8) {
    if slot == 1 {
        (alternative.to_string(), warrant.to_string(), 1)
    } else {
        (warrant.to_string(), alternative.to_string(), 0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssemblyReport {
    pub emitted: usize,
    pub excluded_disputed: Vec<String>,
    pub excluded_identical: Vec<String>,
}

/// Turns validated stage-8 records into task instances. A seeded fair coin
/// decides which slot receives the correct warrant.
pub fn assemble_instances(
    records: &[PipelineRecord],
    debates: &BTreeMap<String, Debate>,
    seed: u64,
) -> Result<(Vec<TaskInstance>, AssemblyReport), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AssemblyReport::default();
    let mut instances = Vec::new();
    for r in records {
        if r.stage != LAST_STAGE {
            return Err(PipelineError::StageOutOfOrder {
                record: r.record_id.clone(),
                found: r.stage,
                expected: LAST_STAGE,
                step: LAST_STAGE,
            });
        }
        r.check_schema()?;
        let slot = rng.gen_bool(0.5) as u8;
        if r.disputed == Some(true) {
            report.excluded_disputed.push(r.record_id.clone());
            continue;
        }
        let debate = debates.get(&r.debate_id).ok_or_else(|| PipelineError::UnknownDebate {
            record: r.record_id.clone(),
            debate: r.debate_id.clone(),
        })?;
        let warrant = r.warrant.as_deref().unwrap_or_default();
        let alternative = r.alternative_warrant.as_deref().unwrap_or_default();
        if warrant == alternative {
            report.excluded_identical.push(r.record_id.clone());
            continue;
        }
        let (warrant0, warrant1, label) = place_warrants(warrant, alternative, slot);
        instances.push(TaskInstance {
            instance_id: r.record_id.clone(),
            warrant0,
            warrant1,
            label,
            reason: r.gist.clone().unwrap_or_default(),
            claim: r.claim.clone().unwrap_or_default(),
            debate_title: debate.title.clone(),
            debate_info: debate.description.clone(),
            debate_id: debate.debate_id.clone(),
        });
    }
    report.emitted = instances.len();
    Ok((instances, report))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let content = fs::read_to_string(path).map_err(|e| file_err(path)(e.to_string()))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| file_err(path)(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut buf = String::new();
    for row in rows {
        buf.push_str(&serde_json::to_string(row).expect("row serializes"));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| file_err(path)(e.to_string()))
}

/// A directory holding `stage-<n>.jsonl`, `stage-<n>.report.json`,
/// `labels.json` and the disputed/resolved queues.
#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StateDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_path(&self, stage: u8) -> PathBuf {
        self.root.join(format!("stage-{stage}.jsonl"))
    }

    pub fn report_path(&self, stage: u8) -> PathBuf {
        self.root.join(format!("stage-{stage}.report.json"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("labels.json")
    }

    pub fn disputed_path(&self) -> PathBuf {
        self.root.join("disputed.jsonl")
    }

    pub fn resolved_path(&self) -> PathBuf {
        self.root.join("resolved.jsonl")
    }

    pub fn init(&self, records: &[PipelineRecord]) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.root).map_err(|e| file_err(&self.root)(e.to_string()))?;
        let mut seen = HashSet::new();
        for r in records {
            if r.stage != 0 {
                return Err(PipelineError::StageOutOfOrder {
                    record: r.record_id.clone(),
                    found: r.stage,
                    expected: 0,
                    step: 0,
                });
            }
            r.check_schema()?;
            if !seen.insert(r.record_id.as_str()) {
                return Err(PipelineError::DuplicateRecord(r.record_id.clone()));
            }
        }
        write_jsonl(&self.stage_path(0), records)?;
        if !self.manifest_path().exists() {
            self.write_manifest(&LabelManifest::default())?;
        }
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &LabelManifest) -> Result<(), PipelineError> {
        let path = self.manifest_path();
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| file_err(&path)(e.to_string()))
    }

    pub fn manifest(&self) -> Result<LabelManifest, PipelineError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(LabelManifest::default());
        }
        let content = fs::read_to_string(&path).map_err(|e| file_err(&path)(e.to_string()))?;
        serde_json::from_str(&content).map_err(|e| file_err(&path)(e.to_string()))
    }

    pub fn read_stage(&self, stage: u8) -> Result<Vec<PipelineRecord>, PipelineError> {
        read_jsonl(&self.stage_path(stage))
    }

    /// Runs one step from the stored previous stage and writes its outputs.
    /// Step 8 also exports disputed records to `disputed.jsonl`.
    pub fn run(
        &self,
        stage: u8,
        responses: &[WorkerResponse],
        config: &PipelineConfig,
    ) -> Result<StepReport, PipelineError> {
        if !(FIRST_STAGE..=LAST_STAGE).contains(&stage) {
            return Err(PipelineError::BadStage(stage));
        }
        let input = self.read_stage(stage - 1)?;
        let (output, report) = run_step(&input, stage, responses, config)?;
        write_jsonl(&self.stage_path(stage), &output)?;
        let path = self.report_path(stage);
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, json + "\n").map_err(|e| file_err(&path)(e.to_string()))?;
        if stage == LAST_STAGE {
            let disputed: Vec<&PipelineRecord> = output.iter().filter(|r| r.disputed == Some(true)).collect();
            write_jsonl(&self.disputed_path(), &disputed)?;
        }
        Ok(report)
    }

    /// Imports `resolved.jsonl` into the stage-8 records.
    pub fn resolve(&self) -> Result<Vec<String>, PipelineError> {
        let resolutions: Vec<Resolution> = read_jsonl(&self.resolved_path())?;
        let mut records = self.read_stage(LAST_STAGE)?;
        let rejected = apply_resolutions(&mut records, &resolutions)?;
        write_jsonl(&self.stage_path(LAST_STAGE), &records)?;
        let disputed: Vec<&PipelineRecord> = records.iter().filter(|r| r.disputed == Some(true)).collect();
        write_jsonl(&self.disputed_path(), &disputed)?;
        Ok(rejected)
    }
}
