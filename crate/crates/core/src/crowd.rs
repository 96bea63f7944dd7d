//! Crowd label aggregation.
//!
//! Besides majority voting this implements the MACE competence model. Every
//! item `i` has a hidden true label `T_i` drawn uniformly from the label set.
//! For each response of worker `j` a hidden flag decides whether the worker
//! spams: with probability `theta_j` the worker copies `T_i`, otherwise the
//! answer is drawn from the worker's spam distribution `xi_j`. The parameters
//! are fitted with EM. Additive smoothing `delta` acts as a Beta/Dirichlet
//! prior, so EM climbs the smoothed objective
//!
//! ```text
//! log L + delta * sum_j ( ln theta_j + ln(1 - theta_j) + sum_a ln xi_j(a) )
//! ```
//!
//! which equals the marginal log-likelihood when `delta = 0`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrowdError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no responses to aggregate")]
    EmptyInput,
    #[error("label set {0:?} has fewer than two labels")]
    DegenerateLabelSet(Vec<String>),
    #[error("worker {worker:?} answered item {item:?} more than once")]
    DuplicateResponse { item: String, worker: String },
    #[error("label {label:?} on item {item:?} is not in the label set")]
    UnknownLabel { item: String, label: String },
    #[error("keep fraction must lie in (0, 1], got {0}")]
    BadKeepFraction(f64),
    #[error("invalid aggregation config: {0}")]
    BadConfig(String),
}

/// One crowd assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerResponse {
    pub item_id: String,
    pub worker_id: String,
    pub submission_time: DateTime<Utc>,
    pub label: String,
}

pub fn parse_responses(content: &str) -> Result<Vec<WorkerResponse>, CrowdError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            serde_json::from_str(l).map_err(|e| CrowdError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_responses(path: &Path) -> Result<Vec<WorkerResponse>, CrowdError> {
    let content = fs::read_to_string(path).map_err(|source| CrowdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_responses(&content)
}

pub fn write_responses<W: Write>(out: &mut W, responses: &[WorkerResponse]) -> io::Result<()> {
    for r in responses {
        writeln!(out, "{}", serde_json::to_string(r).expect("response serializes"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub em_iterations: usize,
    pub restarts: usize,
    pub smoothing_delta: f64,
    pub seed: u64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            em_iterations: 50,
            restarts: 10,
            smoothing_delta: 0.1,
            seed: 0,
        }
    }
}

impl AggregationConfig {
    pub fn with_seed(seed: u64) -> Self {
        AggregationConfig {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), CrowdError> {
        if self.em_iterations == 0 {
            return Err(CrowdError::BadConfig("em_iterations must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(CrowdError::BadConfig("restarts must be >= 1".into()));
        }
        if !(self.smoothing_delta >= 0.0 && self.smoothing_delta.is_finite()) {
            return Err(CrowdError::BadConfig("smoothing_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    item: usize,
    worker: usize,
    label: usize,
}

/// Responses indexed by sorted item, worker and label ids.
///
/// Entries are ordered by (item, worker), so anything computed from a
/// `ResponseSet` is independent of the order responses were read in.
#[derive(Debug, Clone)]
pub struct ResponseSet {
    labels: Vec<String>,
    items: Vec<String>,
    workers: Vec<String>,
    entries: Vec<Entry>,
    item_spans: Vec<(usize, usize)>,
}

impl ResponseSet {
    /// Indexes `responses`. When `labels` is `None` the label set is the set
    /// of observed labels.
    pub fn new(responses: &[WorkerResponse], labels: Option<&[String]>) -> Result<Self, CrowdError> {
        if responses.is_empty() {
            return Err(CrowdError::EmptyInput);
        }
        let labels: Vec<String> = match labels {
            Some(l) => l.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            None => responses
                .iter()
                .map(|r| r.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let items: Vec<String> = responses
            .iter()
            .map(|r| r.item_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let workers: Vec<String> = responses
            .iter()
            .map(|r| r.worker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = |v: &[String]| -> HashMap<String, usize> {
            v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
        };
        let (label_ix, item_ix, worker_ix) = (index(&labels), index(&items), index(&workers));

        let mut entries = Vec::with_capacity(responses.len());
        for r in responses {
            let label = *label_ix.get(&r.label).ok_or_else(|| CrowdError::UnknownLabel {
                item: r.item_id.clone(),
                label: r.label.clone(),
            })?;
            entries.push(Entry {
                item: item_ix[&r.item_id],
                worker: worker_ix[&r.worker_id],
                label,
            });
        }
        entries.sort_by_key(|e| (e.item, e.worker));
        for w in entries.windows(2) {
            if w[0].item == w[1].item && w[0].worker == w[1].worker {
                return Err(CrowdError::DuplicateResponse {
                    item: items[w[0].item].clone(),
                    worker: workers[w[0].worker].clone(),
                });
            }
        }
        let mut item_spans = vec![(0, 0); items.len()];
        let mut start = 0;
        for i in 0..items.len() {
            let mut end = start;
            while end < entries.len() && entries[end].item == i {
                end += 1;
            }
            item_spans[i] = (start, end);
            start = end;
        }
        Ok(ResponseSet {
            labels,
            items,
            workers,
            entries,
            item_spans,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn workers(&self) -> &[String] {
        &self.workers
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn item_entries(&self, item: usize) -> &[Entry] {
        let (s, e) = self.item_spans[item];
        &self.entries[s..e]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityLabel {
    pub label: String,
    pub tie: bool,
    pub votes: usize,
}

/// Modal label per item; ties go to the lexicographically smallest label.
pub fn majority_vote(responses: &[WorkerResponse]) -> BTreeMap<String, MajorityLabel> {
    let mut tallies: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in responses {
        *tallies
            .entry(r.item_id.as_str())
            .or_default()
            .entry(r.label.as_str())
            .or_default() += 1;
    }
    tallies
        .into_iter()
        .map(|(item, votes)| {
            let best = votes.values().copied().max().unwrap_or(0);
            let mut winners = votes.iter().filter(|(_, &v)| v == best).map(|(l, _)| *l);
            let label = winners.next().unwrap_or_default().to_string();
            let tie = winners.next().is_some();
            (item.to_string(), MajorityLabel { label, tie, votes: best })
        })
        .collect()
}

/// Majority vote restricted to `items`; items without any response are
/// returned separately instead of being labeled.
pub fn majority_vote_for(
    items: &[String],
    responses: &[WorkerResponse],
) -> (BTreeMap<String, MajorityLabel>, Vec<String>) {
    let mut votes = majority_vote(responses);
    let mut labeled = BTreeMap::new();
    let mut missing = Vec::new();
    for item in items {
        match votes.remove(item) {
            Some(v) => {
                labeled.insert(item.clone(), v);
            }
            None => missing.push(item.clone()),
        }
    }
    (labeled, missing)
}

/// Fitted MACE parameters and label posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerModel {
    pub labels: Vec<String>,
    pub competences: BTreeMap<String, f64>,
    pub spam_dists: BTreeMap<String, Vec<f64>>,
    pub posteriors: BTreeMap<String, Vec<f64>>,
    /// Marginal log-likelihood of the responses at the fitted parameters.
    pub log_likelihood: f64,
    /// Smoothed EM objective at the fitted parameters.
    pub objective: f64,
    /// Objective before each M-step of the kept restart, then at the end.
    pub trace: Vec<f64>,
    pub restart_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub confidence: f64,
}

impl WorkerModel {
    /// Argmax label (lowest label on ties) and its posterior probability.
    pub fn prediction(&self, item: &str) -> Option<Prediction> {
        let post = self.posteriors.get(item)?;
        let mut best = 0;
        for (k, &p) in post.iter().enumerate() {
            if p > post[best] {
                best = k;
            }
        }
        Some(Prediction {
            label: self.labels[best].clone(),
            confidence: post[best],
        })
    }
}

#[derive(Debug, Clone)]
struct Params {
    theta: Vec<f64>,
    xi: Vec<Vec<f64>>,
}

pub fn mace_fit(set: &ResponseSet, config: &AggregationConfig) -> Result<WorkerModel, CrowdError> {
    config.validate()?;
    if set.labels.len() < 2 {
        return Err(CrowdError::DegenerateLabelSet(set.labels.clone()));
    }
    let k = set.labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Params, Vec<f64>)> = None;
    let mut restart_traces = Vec::with_capacity(config.restarts);

    for _ in 0..config.restarts {
        let mut params = Params {
            theta: (0..set.workers.len()).map(|_| rng.gen_range(0.01..0.99)).collect(),
            xi: vec![vec![1.0 / k as f64; k]; set.workers.len()],
        };
        let mut trace = Vec::with_capacity(config.em_iterations + 1);
        for _ in 0..config.em_iterations {
            let (posteriors, ll) = e_step(set, &params);
            trace.push(objective(ll, &params, config.smoothing_delta));
            params = m_step(set, &posteriors, &params, config.smoothing_delta);
        }
        let (_, ll) = e_step(set, &params);
        trace.push(objective(ll, &params, config.smoothing_delta));
        let last = *trace.last().expect("trace is non-empty");
        let better = match &best {
            None => true,
            Some((_, t)) => last > *t.last().expect("trace is non-empty"),
        };
        restart_traces.push(trace.clone());
        if better {
            best = Some((params, trace));
        }
    }

    let (params, trace) = best.expect("at least one restart");
    let (posteriors, ll) = e_step(set, &params);
    Ok(WorkerModel {
        labels: set.labels.clone(),
        competences: set.workers.iter().cloned().zip(params.theta.iter().copied()).collect(),
        spam_dists: set.workers.iter().cloned().zip(params.xi.iter().cloned()).collect(),
        posteriors: set.items.iter().cloned().zip(posteriors).collect(),
        log_likelihood: ll,
        objective: objective(ll, &params, config.smoothing_delta),
        trace,
        restart_traces,
    })
}

/// Posteriors over true labels per item and the marginal log-likelihood.
fn e_step(set: &ResponseSet, params: &Params) -> (Vec<Vec<f64>>, f64) {
    let k = set.labels.len();
    let log_prior = -(k as f64).ln();
    let mut ll = 0.0;
    let mut posteriors = Vec::with_capacity(set.items.len());
    let mut log_w = vec![0.0; k];
    for item in 0..set.items.len() {
        for (t, lw) in log_w.iter_mut().enumerate() {
            let mut acc = log_prior;
            for e in set.item_entries(item) {
                let theta = params.theta[e.worker];
                let copy = if e.label == t { theta } else { 0.0 };
                acc += (copy + (1.0 - theta) * params.xi[e.worker][e.label]).ln();
            }
            *lw = acc;
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_w.iter().map(|lw| (lw - max).exp()).sum();
        let log_marginal = max + sum.ln();
        ll += log_marginal;
        posteriors.push(log_w.iter().map(|lw| (lw - log_marginal).exp()).collect());
    }
    (posteriors, ll)
}

fn m_step(set: &ResponseSet, posteriors: &[Vec<f64>], prev: &Params, delta: f64) -> Params {
    let k = set.labels.len();
    let n_workers = set.workers.len();
    let mut copied = vec![0.0; n_workers];
    let mut total = vec![0.0; n_workers];
    let mut spam = vec![vec![0.0; k]; n_workers];
    for e in &set.entries {
        let theta = prev.theta[e.worker];
        let xi = prev.xi[e.worker][e.label];
        let p_true = posteriors[e.item][e.label];
        // P(not spamming | answer) = P(T = answer) * theta / (theta + (1 - theta) xi)
        let denom = theta + (1.0 - theta) * xi;
        let not_spam = if denom > 0.0 { p_true * theta / denom } else { 0.0 };
        copied[e.worker] += not_spam;
        total[e.worker] += 1.0;
        spam[e.worker][e.label] += 1.0 - not_spam;
    }
    let theta = (0..n_workers)
        .map(|j| (copied[j] + delta) / (total[j] + 2.0 * delta))
        .collect();
    let xi = (0..n_workers)
        .map(|j| {
            let mass: f64 = spam[j].iter().sum::<f64>() + k as f64 * delta;
            if mass > 0.0 {
                spam[j].iter().map(|s| (s + delta) / mass).collect()
            } else {
                prev.xi[j].clone()
            }
        })
        .collect();
    Params { theta, xi }
}

fn objective(ll: f64, params: &Params, delta: f64) -> f64 {
    if delta == 0.0 {
        return ll;
    }
    let prior: f64 = params
        .theta
        .iter()
        .zip(&params.xi)
        .map(|(t, xi)| t.ln() + (1.0 - t).ln() + xi.iter().map(|x| x.ln()).sum::<f64>())
        .sum();
    ll + delta * prior
}

/// Keeps the `ceil(keep_fraction * n)` most confident items. Confidence is
/// the maximum posterior; equal confidences are ordered by item id.
pub fn threshold_predictions(
    model: &WorkerModel,
    keep_fraction: f64,
) -> Result<BTreeMap<String, Prediction>, CrowdError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CrowdError::BadKeepFraction(keep_fraction));
    }
    let mut ranked: Vec<(&String, Prediction)> = model
        .posteriors
        .keys()
        .map(|item| (item, model.prediction(item).expect("item has a posterior")))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.confidence
            .total_cmp(&a.1.confidence)
            .then_with(|| a.0.cmp(b.0))
    });
    let keep = kept_count(ranked.len(), keep_fraction);
    Ok(ranked
        .into_iter()
        .take(keep)
        .map(|(item, p)| (item.clone(), p))
        .collect())
}

/// `ceil(fraction * n)`, tolerant of the representation error in `fraction`.
pub fn kept_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Writes `itemId  label  confidence` rows ordered by item id.
pub fn write_predictions_tsv<W: Write>(out: &mut W, predictions: &BTreeMap<String, Prediction>) -> io::Result<()> {
    writeln!(out, "itemId\tlabel\tconfidence")?;
    for (item, p) in predictions {
        writeln!(out, "{item}\t{}\t{}", p.label, p.confidence)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::seq::SliceRandom;

    pub(crate) fn resp(item: &str, worker: &str, label: &str, secs: i64) -> WorkerResponse {
        WorkerResponse {
            item_id: item.into(),
            worker_id: worker.into(),
            submission_time: Utc.timestamp_opt(1_500_000_000 + secs, 0).unwrap(),
            label: label.into(),
        }
    }

    fn binary() -> Vec<String> {
        vec!["0".to_string(), "1".to_string()]
    }

    #[test]
    fn majority_of_unanimous_item() {
        let r = vec![resp("i", "a", "A", 0), resp("i", "b", "A", 1), resp("i", "c", "A", 2)];
        let mv = majority_vote(&r);
        assert_eq!(mv["i"].label, "A");
        assert!(!mv["i"].tie);
    }

    #[test]
    fn majority_tie_breaks_lexicographically() {
        let r = vec![
            resp("i", "a", "B", 0),
            resp("i", "b", "A", 1),
            resp("i", "c", "B", 2),
            resp("i", "d", "A", 3),
        ];
        let mv = majority_vote(&r);
        assert_eq!(mv["i"].label, "A");
        assert!(mv["i"].tie);
    }

    #[test]
    fn contrarian_never_changes_the_mode() {
        let mut r = Vec::new();
        let truth = ["x", "y", "x", "x", "y"];
        for (i, t) in truth.iter().enumerate() {
            for w in 0..4 {
                r.push(resp(&format!("i{i}"), &format!("w{w}"), t, w));
            }
            let flipped = if *t == "x" { "y" } else { "x" };
            r.push(resp(&format!("i{i}"), "contrarian", flipped, 9));
        }
        let mv = majority_vote(&r);
        for (i, t) in truth.iter().enumerate() {
            let m = &mv[&format!("i{i}")];
            assert_eq!(m.label, *t);
            assert!(!m.tie);
        }
    }

    #[test]
    fn missing_items_are_reported() {
        let r = vec![resp("a", "w", "x", 0)];
        let (labeled, missing) = majority_vote_for(&["a".into(), "b".into()], &r);
        assert_eq!(labeled.len(), 1);
        assert_eq!(missing, vec!["b".to_string()]);
    }

    #[test]
    fn response_set_rejects_duplicates_and_unknown_labels() {
        let dup = vec![resp("i", "a", "0", 0), resp("i", "a", "1", 1)];
        assert!(matches!(
            ResponseSet::new(&dup, None),
            Err(CrowdError::DuplicateResponse { .. })
        ));
        let unknown = vec![resp("i", "a", "2", 0)];
        assert!(matches!(
            ResponseSet::new(&unknown, Some(&binary())),
            Err(CrowdError::UnknownLabel { .. })
        ));
        assert!(matches!(ResponseSet::new(&[], None), Err(CrowdError::EmptyInput)));
    }

    #[test]
    fn degenerate_label_set_is_an_error() {
        let r = vec![resp("i", "a", "0", 0)];
        let set = ResponseSet::new(&r, None).unwrap();
        assert!(matches!(
            mace_fit(&set, &AggregationConfig::default()),
            Err(CrowdError::DegenerateLabelSet(_))
        ));
    }

    #[test]
    fn unanimous_workers_give_confident_posteriors() {
        let mut r = Vec::new();
        for i in 0..10 {
            let label = if i % 3 == 0 { "1" } else { "0" };
            for w in 0..3 {
                r.push(resp(&format!("i{i}"), &format!("w{w}"), label, w));
            }
        }
        let set = ResponseSet::new(&r, Some(&binary())).unwrap();
        let model = mace_fit(&set, &AggregationConfig::with_seed(3)).unwrap();
        for i in 0..10 {
            let want = if i % 3 == 0 { 1 } else { 0 };
            let post = &model.posteriors[&format!("i{i}")];
            assert!(post[want] >= 0.99, "item {i}: {post:?}");
        }
    }

    /// Simulates `good` workers answering correctly with probability
    /// `competence` (otherwise uniformly at random) plus one uniform spammer.
    pub(crate) fn simulate(items: usize, good: usize, competence: f64, seed: u64) -> Vec<WorkerResponse> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..items {
            let truth: u8 = rng.gen_range(0..2);
            for w in 0..=good {
                let label = if w < good && rng.gen_bool(competence) {
                    truth
                } else {
                    rng.gen_range(0..2)
                };
                let worker = if w < good { format!("good{w}") } else { "spammer".to_string() };
                out.push(resp(&format!("item{i:03}"), &worker, &label.to_string(), w as i64));
            }
        }
        out
    }

    #[test]
    fn spammer_gets_lowest_competence() {
        let r = simulate(200, 5, 0.9, 11);
        let set = ResponseSet::new(&r, None).unwrap();
        let model = mace_fit(&set, &AggregationConfig::with_seed(1)).unwrap();
        let spam = model.competences["spammer"];
        for (w, theta) in &model.competences {
            if w != "spammer" {
                assert!(spam < *theta, "{w}: {theta} vs spammer {spam}");
            }
        }
    }

    #[test]
    fn model_invariants_hold() {
        let r = simulate(60, 4, 0.7, 5);
        let set = ResponseSet::new(&r, None).unwrap();
        let model = mace_fit(&set, &AggregationConfig::with_seed(9)).unwrap();
        for xi in model.spam_dists.values() {
            assert!((xi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for post in model.posteriors.values() {
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for theta in model.competences.values() {
            assert!((0.0..=1.0).contains(theta));
        }
        for trace in &model.restart_traces {
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "objective decreased: {w:?}");
            }
        }
        assert_eq!(model.trace.last().copied(), Some(model.objective));
    }

    #[test]
    fn unsmoothed_log_likelihood_is_monotone() {
        let r = simulate(40, 3, 0.75, 2);
        let set = ResponseSet::new(&r, None).unwrap();
        let config = AggregationConfig {
            smoothing_delta: 0.0,
            ..AggregationConfig::with_seed(4)
        };
        let model = mace_fit(&set, &config).unwrap();
        assert_eq!(model.objective, model.log_likelihood);
        for trace in &model.restart_traces {
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {w:?}");
            }
        }
    }

    #[test]
    fn response_order_does_not_matter() {
        let r = simulate(30, 3, 0.8, 8);
        let mut shuffled = r.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
        let config = AggregationConfig::with_seed(21);
        let a = mace_fit(&ResponseSet::new(&r, None).unwrap(), &config).unwrap();
        let b = mace_fit(&ResponseSet::new(&shuffled, None).unwrap(), &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn renaming_labels_permutes_the_fit() {
        let r = simulate(40, 4, 0.8, 13);
        let renamed: Vec<_> = r
            .iter()
            .map(|x| WorkerResponse {
                label: if x.label == "0" { "zz".into() } else { "aa".into() },
                ..x.clone()
            })
            .collect();
        let config = AggregationConfig::with_seed(2);
        let a = mace_fit(&ResponseSet::new(&r, None).unwrap(), &config).unwrap();
        let b = mace_fit(&ResponseSet::new(&renamed, None).unwrap(), &config).unwrap();
        // labels "0","1" map to "zz","aa", i.e. index 0 <-> index 1
        for (item, post) in &a.posteriors {
            let other = &b.posteriors[item];
            assert!((post[0] - other[1]).abs() < 1e-9 && (post[1] - other[0]).abs() < 1e-9);
        }
        for (w, xi) in &a.spam_dists {
            let other = &b.spam_dists[w];
            assert!((xi[0] - other[1]).abs() < 1e-9 && (xi[1] - other[0]).abs() < 1e-9);
            assert!((a.competences[w] - b.competences[w]).abs() < 1e-9);
        }
    }

    fn model_with(posteriors: &[(&str, f64)]) -> WorkerModel {
        WorkerModel {
            labels: binary(),
            competences: BTreeMap::new(),
            spam_dists: BTreeMap::new(),
            posteriors: posteriors
                .iter()
                .map(|(i, p)| (i.to_string(), vec![*p, 1.0 - *p]))
                .collect(),
            log_likelihood: 0.0,
            objective: 0.0,
            trace: Vec::new(),
            restart_traces: Vec::new(),
        }
    }

    #[test]
    fn threshold_keeps_ceil_fraction() {
        let posts: Vec<(String, f64)> = (0..100).map(|i| (format!("i{i:03}"), 0.5 + i as f64 / 250.0)).collect();
        let refs: Vec<(&str, f64)> = posts.iter().map(|(i, p)| (i.as_str(), *p)).collect();
        let model = model_with(&refs);
        assert_eq!(threshold_predictions(&model, 1.0).unwrap().len(), 100);
        let kept = threshold_predictions(&model, 0.95).unwrap();
        assert_eq!(kept.len(), 95);
        assert!(!kept.contains_key("i000"));
        assert!(threshold_predictions(&model, 0.0).is_err());
        assert!(threshold_predictions(&model, 1.5).is_err());
    }

    #[test]
    fn threshold_tie_keeps_lower_item_id() {
        let model = model_with(&[("b", 0.8), ("a", 0.8), ("c", 0.99)]);
        let kept = threshold_predictions(&model, 0.6).unwrap();
        assert_eq!(kept.keys().collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(kept["a"].label, "0");
    }

    #[test]
    fn predictions_tsv_layout() {
        let model = model_with(&[("a", 0.25)]);
        let kept = threshold_predictions(&model, 1.0).unwrap();
        let mut buf = Vec::new();
        write_predictions_tsv(&mut buf, &kept).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "itemId\tlabel\tconfidence\na\t1\t0.75\n");
    }

    #[test]
    fn responses_json_round_trip() {
        let r = vec![resp("i", "w", "claim", 5)];
        let mut buf = Vec::new();
        write_responses(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"itemId\":\"i\""));
        assert!(text.contains("\"submissionTime\":\"2017-07-14T02:40:05Z\""));
        assert_eq!(parse_responses(&text).unwrap(), r);
    }
}
