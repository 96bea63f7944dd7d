use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use arct_core::agreement::{cohen_kappa, krippendorff_alpha_nominal, LabelSeriesPair};
use arct_core::corpus::{Debate, TaskInstance};
use arct_core::crowd::{kept_count, mace_fit, threshold_predictions, AggregationConfig, ResponseSet, WorkerResponse};
use arct_core::eval::accuracy;
use arct_core::lm::{corpus_sentences, lm_scores, lm_choose, train_kn};
use arct_core::pipeline::{assemble_instances, run_step, PipelineConfig, PipelineRecord, Stance};

fn resp(item: usize, worker: usize, label: &str) -> WorkerResponse {
    WorkerResponse {
        item_id: format!("i{item:02}"),
        worker_id: format!("w{worker}"),
        submission_time: Utc.timestamp_opt(1_600_000_000 + (item * 10 + worker) as i64, 0).unwrap(),
        label: label.into(),
    }
}

const LABELS: [&str; 3] = ["p", "q", "r"];

fn series() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..15).prop_flat_map(|n| (prop::collection::vec(0usize..3, n), prop::collection::vec(0usize..3, n)))
}

fn pair_of(a: &[usize], b: &[usize], names: &[&str; 3]) -> LabelSeriesPair {
    LabelSeriesPair::new(
        (0..a.len()).map(|i| format!("i{i}")).collect(),
        a.iter().map(|&x| names[x].to_string()).collect(),
        b.iter().map(|&x| names[x].to_string()).collect(),
    )
    .unwrap()
}

/// Responses for a sparse item x worker matrix; `None` cells are missing.
fn matrix() -> impl Strategy<Value = Vec<Vec<Option<usize>>>> {
    prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0usize..3), 2..5), 1..10)
}

fn responses_of(m: &[Vec<Option<usize>>], names: &[&str; 3]) -> Vec<WorkerResponse> {
    let mut out = Vec::new();
    for (i, row) in m.iter().enumerate() {
        for (w, cell) in row.iter().enumerate() {
            if let Some(l) = cell {
                out.push(resp(i, w, names[*l]));
            }
        }
    }
    out
}

fn scott_pi(a: &[usize], b: &[usize]) -> Option<f64> {
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut pooled = [0.0; 3];
    for &x in a.iter().chain(b) {
        pooled[x] += 1.0;
    }
    let p_e: f64 = pooled.iter().map(|c| (c / (2.0 * n)).powi(2)).sum();
    if p_e == 1.0 {
        None
    } else {
        Some((p_o - p_e) / (1.0 - p_e))
    }
}

proptest! {
    #[test]
    fn kappa_is_symmetric_bounded_and_label_blind((a, b) in series()) {
        let ab = cohen_kappa(&pair_of(&a, &b, &LABELS));
        let ba = cohen_kappa(&pair_of(&b, &a, &LABELS));
        let renamed = cohen_kappa(&pair_of(&a, &b, &["zz", "aa", "mm"]));
        match (ab, ba, renamed) {
            (Ok(x), Ok(y), Ok(z)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((x - z).abs() < 1e-12);
                prop_assert!(x <= 1.0 + 1e-12);
            }
            (Err(_), Err(_), Err(_)) => {}
            other => prop_assert!(false, "inconsistent results {other:?}"),
        }
    }

    #[test]
    fn alpha_is_bounded_and_label_and_order_blind(m in matrix()) {
        let responses = responses_of(&m, &LABELS);
        let mut reversed = responses_of(&m, &["c", "b", "a"]);
        reversed.reverse();
        match (krippendorff_alpha_nominal(&responses), krippendorff_alpha_nominal(&reversed)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(x <= 1.0 + 1e-12);
            }
            (Err(e), Err(f)) => prop_assert_eq!(e, f),
            other => prop_assert!(false, "inconsistent results {other:?}"),
        }
    }

    /// With two coders on every item, alpha and Scott's pi differ only by the
    /// small-sample factor: (1 - alpha) * 2N / (2N - 1) = 1 - pi.
    #[test]
    fn alpha_and_pi_for_two_complete_coders((a, b) in series()) {
        let responses: Vec<_> = a
            .iter()
            .zip(&b)
            .enumerate()
            .flat_map(|(i, (&x, &y))| [resp(i, 0, LABELS[x]), resp(i, 1, LABELS[y])])
            .collect();
        if let (Ok(alpha), Some(pi)) = (krippendorff_alpha_nominal(&responses), scott_pi(&a, &b)) {
            let two_n = 2.0 * a.len() as f64;
            prop_assert!(((1.0 - alpha) * two_n / (two_n - 1.0) - (1.0 - pi)).abs() < 1e-9);
        }
    }

    #[test]
    fn mace_outputs_are_distributions_and_order_free(m in matrix(), seed in 0u64..50) {
        let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
        let responses = responses_of(&m, &LABELS);
        prop_assume!(!responses.is_empty());
        let config = AggregationConfig { em_iterations: 15, restarts: 2, smoothing_delta: 0.1, seed };
        let model = mace_fit(&ResponseSet::new(&responses, Some(&labels)).unwrap(), &config).unwrap();
        for post in model.posteriors.values() {
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(post.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        for (w, theta) in &model.competences {
            prop_assert!(*theta > 0.0 && *theta < 1.0);
            prop_assert!((model.spam_dists[w].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut shuffled = responses.clone();
        shuffled.reverse();
        let again = mace_fit(&ResponseSet::new(&shuffled, Some(&labels)).unwrap(), &config).unwrap();
        prop_assert_eq!(&model, &again);
        for f in [0.3, 0.5, 1.0] {
            let kept = threshold_predictions(&model, f).unwrap();
            prop_assert_eq!(kept.len(), kept_count(model.posteriors.len(), f));
            prop_assert_eq!(kept.len(), (f * model.posteriors.len() as f64 - 1e-9).ceil() as usize);
        }
    }

    #[test]
    fn kn_model_normalizes_on_random_corpora(
        lines in prop::collection::vec(prop::collection::vec(0usize..6, 1..7), 2..8),
        order in 1usize..=4,
        max_vocab in 2usize..8,
    ) {
        let words = ["a", "b", "c", "d", "e", "f"];
        let text: String = lines
            .iter()
            .map(|l| l.iter().map(|&w| words[w]).collect::<Vec<_>>().join(" ") + "\n")
            .collect();
        let sentences = corpus_sentences(&text);
        let total: usize = sentences.iter().map(|s| s.len()).sum();
        prop_assume!(total >= order);
        let m = train_kn(&sentences, order, max_vocab).unwrap();
        for ctx in m.observed_contexts() {
            prop_assert!((m.total_mass(&ctx) - 1.0).abs() < 1e-9, "ctx {ctx:?}");
        }
    }

    #[test]
    fn lm_choice_flips_with_the_warrants(w0 in "[a-f]( [a-f]){0,4}", w1 in "[a-f]( [a-f]){0,4}") {
        let m = train_kn(&corpus_sentences("a b c\nb c d\nc d e f\na a b\n"), 3, 100).unwrap();
        let inst = instance("x", &w0, &w1, 0);
        let (s0, s1) = lm_scores(&m, &inst, false);
        if s0 != s1 {
            prop_assert_eq!(lm_choose(&m, &inst.permuted(), false), 1 - lm_choose(&m, &inst, false));
        } else {
            prop_assert_eq!(lm_choose(&m, &inst, false), 0);
        }
    }

    #[test]
    fn flipping_every_prediction_mirrors_accuracy(labels in prop::collection::vec(0u8..2, 1..40), preds in prop::collection::vec(0u8..2, 40)) {
        let gold: Vec<_> = labels.iter().enumerate().map(|(i, &l)| instance(&format!("g{i}"), "u", "v", l)).collect();
        let p: BTreeMap<String, u8> = gold.iter().zip(&preds).map(|(g, &l)| (g.instance_id.clone(), l)).collect();
        let flipped: BTreeMap<String, u8> = p.iter().map(|(k, v)| (k.clone(), 1 - v)).collect();
        let a = accuracy(&p, &gold).unwrap();
        prop_assert!((a + accuracy(&flipped, &gold).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_reports_balance_for_any_stance_votes(votes in prop::collection::vec(prop::collection::vec(0usize..5, 0..4), 1..12)) {
        let stances = ["claim", "opposing_claim", "neutral", "none", "claim:sarcastic"];
        let records: Vec<_> = (0..votes.len()).map(|i| PipelineRecord::new(&format!("i{i:02}"), "d", "c", "not c")).collect();
        let responses: Vec<_> = votes
            .iter()
            .enumerate()
            .flat_map(|(i, vs)| vs.iter().enumerate().map(move |(w, &v)| resp(i, w, stances[v])))
            .collect();
        let (out, report) = run_step(&records, 1, &responses, &PipelineConfig::default()).unwrap();
        prop_assert!(report.balances());
        prop_assert_eq!(out.len(), report.output_count);
        prop_assert!(out.iter().all(|r| r.stance_label.is_some_and(Stance::takes_stance)));
    }

    #[test]
    fn assembled_label_points_at_the_warrant(n in 1usize..30, seed in any::<u64>()) {
        let records: Vec<_> = (0..n).map(|i| finished(&format!("r{i:02}"))).collect();
        let debates = BTreeMap::from([(
            "d".to_string(),
            Debate { debate_id: "d".into(), title: "t".into(), description: "x".into(), year: 2014 },
        )]);
        let (instances, report) = assemble_instances(&records, &debates, seed).unwrap();
        prop_assert_eq!(report.emitted, n);
        for (inst, rec) in instances.iter().zip(&records) {
            prop_assert_eq!(inst.warrant(inst.label as usize), rec.warrant.as_deref().unwrap());
            prop_assert_eq!(inst.warrant(1 - inst.label as usize), rec.alternative_warrant.as_deref().unwrap());
        }
    }
}

fn instance(id: &str, w0: &str, w1: &str, label: u8) -> TaskInstance {
    TaskInstance {
        instance_id: id.into(),
        warrant0: w0.into(),
        warrant1: w1.into(),
        label,
        reason: "r".into(),
        claim: "c".into(),
        debate_title: "t".into(),
        debate_info: "i".into(),
        debate_id: "t".into(),
    }
}

fn finished(id: &str) -> PipelineRecord {
    let mut r = PipelineRecord::new(id, "d", "c", "not c");
    r.stage = 8;
    r.stance_label = Some(Stance::Claim);
    r.sarcastic = Some(false);
    r.reason_spans = Some(vec![]);
    r.gist = Some(format!("gist {id}"));
    r.alternative_warrant = Some(format!("aw {id}"));
    r.logic_score = Some(1.2);
    r.warrant = Some(format!("w {id}"));
    r.disputed = Some(false);
    r
}
