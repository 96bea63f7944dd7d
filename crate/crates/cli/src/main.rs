//! `arct`: command-line front end for the toolkit.
//!
//! Exit status is 0 on success, 1 when input data is rejected and 2 for
//! usage errors.

mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use arct_core::agreement::{
    busiest_worker_pair, cohen_kappa, krippendorff_alpha_nominal, krippendorff_alpha_unitized, read_span_jsonl,
    LabelSeriesPair,
};
use arct_core::corpus::{load_debates, load_instances, save_instances, split_by_year, DataSplit, InstanceFormat, TaskInstance};
use arct_core::crowd::{
    mace_fit, majority_vote, read_responses, threshold_predictions, write_predictions_tsv, AggregationConfig, Prediction,
    ResponseSet,
};
use arct_core::eval::{
    accuracy, predictions_from, random_baseline, read_predictions_csv, report, write_predictions_csv, RunReport,
};
use arct_core::lm::{lm_choose, read_corpus, train_kn, LanguageModel};
use arct_core::neural::{predict, train_runs, write_history_csv, Dims, NeuralModel, TrainConfig, Variant};
use arct_core::pipeline::{
    prepare_validation_tasks, read_jsonl, write_jsonl, Aggregator, MeanWordEmbedder, PipelineConfig, PipelineRecord,
    StateDir, DEFAULT_LOGIC_THRESHOLD,
};
use arct_core::reliability::{derive_seed, mean_std, reliability_curve, render_curve_svg, write_curve_csv, CurveSpec};
use arct_core::text::WordVectors;

/// A problem with how the command was invoked rather than with the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Parser)]
#[command(name = "arct", version, about = "Crowd aggregation, warrant pipeline and baselines for argument reasoning comprehension")]
struct Cli {
    /// Plain-text `key = value` defaults; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate crowd labels into one label per item.
    Aggregate(AggregateArgs),
    /// Compute agreement between annotators.
    Agreement(AgreementArgs),
    /// Estimate agreement between two simulated crowd groups.
    Reliability(ReliabilityArgs),
    /// Run the warrant reconstruction workflow.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Train an n-gram language model.
    TrainLm(TrainLmArgs),
    /// Evaluate the language-model baseline on task instances.
    LmEval(LmEvalArgs),
    /// Train an attention model.
    TrainNeural(TrainNeuralArgs),
    /// Score predictions or the random baseline against gold instances.
    Evaluate(EvaluateArgs),
    /// Render the results table from run reports.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mace,
    Majority,
}

#[derive(Args)]
struct AggregationFlags {
    /// EM iterations per restart.
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// Random restarts.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Prior smoothing added to competence and spam counts.
    #[arg(long, default_value_t = 0.1)]
    smoothing: f64,
    /// Full label set, comma separated (default: labels seen in the responses).
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

impl AggregationFlags {
    fn config(&self, seed: u64) -> AggregationConfig {
        AggregationConfig {
            em_iterations: self.iterations,
            restarts: self.restarts,
            smoothing_delta: self.smoothing,
            seed,
        }
    }
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    responses: PathBuf,
    /// Output TSV `itemId  label  confidence`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mace")]
    method: Method,
    /// Keep only the most confident fraction of items (MACE only).
    #[arg(long, default_value_t = 1.0)]
    keep_fraction: f64,
    #[command(flatten)]
    aggregation: AggregationFlags,
    /// Required for MACE.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write worker competences as TSV `workerId  competence`.
    #[arg(long)]
    competences: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Kappa,
    Alpha,
    AlphaU,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    /// Response JSONL (kappa, alpha).
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Span JSONL (alpha-u).
    #[arg(long)]
    spans: Option<PathBuf>,
    /// Two worker ids for kappa; default is the pair sharing the most items.
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<String>>,
}

#[derive(Args)]
struct ReliabilityArgs {
    #[arg(long)]
    responses: PathBuf,
    /// Crowd sizes, as `lo-hi` or a comma list.
    #[arg(long, default_value = "1-9")]
    k: String,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.9,0.95,1.0")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long)]
    seed: u64,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG chart.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    aggregation: AggregationFlags,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Create a state directory from stage-0 records.
    Init {
        #[arg(long)]
        state: PathBuf,
        /// JSONL of stage-0 records.
        #[arg(long)]
        records: PathBuf,
        /// Label manifest to use instead of the default one.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run one step on the previous stage's records.
    Step {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, value_enum, default_value = "majority")]
        aggregator: Method,
        #[arg(long, default_value_t = 1.0)]
        keep_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_LOGIC_THRESHOLD)]
        logic_threshold: f64,
        /// Required with `--aggregator mace`.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        aggregation: AggregationFlags,
    },
    /// Pick a distractor reason for every record and write validation tasks.
    Distractors {
        #[arg(long)]
        state: PathBuf,
        /// Word vectors, `token v1 ... vE` per line.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 5)]
        stage: u8,
        /// Output JSONL of validation tasks.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply expert decisions from resolved.jsonl.
    Resolve {
        #[arg(long)]
        state: PathBuf,
    },
    /// Turn stage-8 records into task instances.
    Assemble {
        #[arg(long)]
        state: PathBuf,
        /// Debate TSV `debateId  year  title  description`.
        #[arg(long)]
        debates: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Instance file; `.jsonl` selects JSONL, anything else TSV.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainLmArgs {
    /// Plain text, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 100_000)]
    max_vocab: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LmEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    /// Prepend reason and claim to each warrant before scoring.
    #[arg(long)]
    with_context: bool,
    /// Write predictions CSV.
    #[arg(long)]
    pred_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainNeuralArgs {
    #[arg(long, requires = "dev", conflicts_with = "instances")]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// All instances, split by debate year (needs --debates).
    #[arg(long, requires = "debates")]
    instances: Option<PathBuf>,
    #[arg(long)]
    debates: Option<PathBuf>,
    #[arg(long, default_value = "intra-warrant-context")]
    variant: Variant,
    #[arg(long)]
    seed: u64,
    /// Parameters of the run with the best dev accuracy.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; with several runs, `.run<r>` is inserted before the extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run report JSON for `arct report`.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Test-set predictions CSV of the saved model.
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Pre-trained word vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    freeze_embeddings: bool,
    #[arg(long, default_value_t = 0.9)]
    dropout: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Row name in run reports (default: the variant's name).
    #[arg(long)]
    approach: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Dev,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV `instanceId,label`.
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    /// Evaluate the random baseline instead of a predictions file.
    #[arg(long, requires = "seed")]
    random: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Random-baseline runs.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Write a run report for `arct report`.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    approach: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

#[derive(Args)]
struct ReportArgs {
    /// Run report JSON files (an object or an array of objects each).
    #[arg(long, num_args = 0..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(config::ConfigError(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Aggregate(a) => aggregate(a),
        Command::Agreement(a) => agreement(a),
        Command::Reliability(a) => reliability(a),
        Command::Pipeline(p) => pipeline(p),
        Command::TrainLm(a) => train_lm(a),
        Command::LmEval(a) => lm_eval(a),
        Command::TrainNeural(a) => train_neural(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn instances(path: &Path) -> Result<Vec<TaskInstance>> {
    Ok(load_instances(path, InstanceFormat::from_path(path))?)
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let responses = read_responses(&a.responses)?;
    let predictions: BTreeMap<String, Prediction> = match a.method {
        Method::Majority => {
            let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
            for r in &responses {
                *totals.entry(r.item_id.as_str()).or_default() += 1;
            }
            majority_vote(&responses)
                .into_iter()
                .map(|(item, m)| {
                    let confidence = m.votes as f64 / totals[item.as_str()] as f64;
                    (item, Prediction { label: m.label, confidence })
                })
                .collect()
        }
        Method::Mace => {
            let Some(seed) = a.seed else {
                return usage("--seed is required with --method mace");
            };
            let set = ResponseSet::new(&responses, a.aggregation.labels.as_deref())?;
            let model = mace_fit(&set, &a.aggregation.config(seed))?;
            if let Some(path) = &a.competences {
                let mut out = create(path)?;
                writeln!(out, "workerId\tcompetence")?;
                for (w, c) in &model.competences {
                    writeln!(out, "{w}\t{c:.6}")?;
                }
                out.flush()?;
            }
            threshold_predictions(&model, a.keep_fraction)?
        }
    };
    let mut out = create(&a.out)?;
    write_predictions_tsv(&mut out, &predictions)?;
    out.flush()?;
    println!("items\t{}", predictions.len());
    Ok(())
}

fn agreement(a: AgreementArgs) -> Result<()> {
    match a.metric {
        Metric::AlphaU => {
            let Some(path) = &a.spans else {
                return usage("--spans is required for alpha-u");
            };
            let continua = read_span_jsonl(path)?;
            println!("krippendorff_alpha_u\t{:.6}", krippendorff_alpha_unitized(&continua)?);
        }
        Metric::Alpha => {
            let Some(path) = &a.responses else {
                return usage("--responses is required for alpha");
            };
            let responses = read_responses(path)?;
            println!("krippendorff_alpha\t{:.6}", krippendorff_alpha_nominal(&responses)?);
        }
        Metric::Kappa => {
            let Some(path) = &a.responses else {
                return usage("--responses is required for kappa");
            };
            let responses = read_responses(path)?;
            let pair = match &a.workers {
                Some(w) if w.len() == 2 => {
                    let labels_of = |id: &str| -> BTreeMap<String, String> {
                        responses
                            .iter()
                            .filter(|r| r.worker_id == id)
                            .map(|r| (r.item_id.clone(), r.label.clone()))
                            .collect()
                    };
                    LabelSeriesPair::from_maps(&labels_of(&w[0]), &labels_of(&w[1]))
                }
                Some(_) => return usage("--workers takes exactly two ids"),
                None => match busiest_worker_pair(&responses) {
                    Some(p) => p,
                    None => bail!("no two workers share an item"),
                },
            };
            println!("cohen_kappa\t{:.6}", cohen_kappa(&pair)?);
        }
    }
    Ok(())
}

fn parse_k_range(raw: &str) -> Result<Vec<usize>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| UsageError(format!("bad crowd size {s:?} in --k")))
    };
    let ks: Vec<usize> = if let Some((lo, hi)) = raw.split_once('-') {
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return usage(format!("empty --k range {raw}"));
        }
        (lo..=hi).collect()
    } else {
        raw.split(',').map(parse).collect::<std::result::Result<_, _>>()?
    };
    Ok(ks)
}

fn reliability(a: ReliabilityArgs) -> Result<()> {
    let responses = read_responses(&a.responses)?;
    let mut spec = CurveSpec::new(parse_k_range(&a.k)?, a.fractions.clone(), a.repeats, a.aggregation.config(a.seed));
    spec.labels = a.aggregation.labels.clone();
    let points = reliability_curve(&responses, &spec)?;
    if let Some(svg) = &a.svg {
        fs::write(svg, render_curve_svg(&points)).with_context(|| format!("cannot write {}", svg.display()))?;
    }
    match &a.out {
        Some(path) => {
            let mut out = create(path)?;
            write_curve_csv(&mut out, &points)?;
            out.flush()?;
            println!("points\t{}", points.len());
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_curve_csv(&mut out, &points)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn pipeline(cmd: PipelineCommand) -> Result<()> {
    match cmd {
        PipelineCommand::Init { state, records, labels } => {
            let recs: Vec<PipelineRecord> = read_jsonl(&records)?;
            let dir = StateDir::new(state);
            if let Some(path) = labels {
                let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                let manifest = serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?;
                fs::create_dir_all(dir.root())?;
                dir.write_manifest(&manifest)?;
            }
            dir.init(&recs)?;
            println!("records\t{}", recs.len());
        }
        PipelineCommand::Step {
            state,
            stage,
            responses,
            aggregator,
            keep_fraction,
            logic_threshold,
            seed,
            aggregation,
        } => {
            let dir = StateDir::new(state);
            let aggregator = match aggregator {
                Method::Majority => Aggregator::Majority,
                Method::Mace => {
                    let Some(seed) = seed else {
                        return usage("--seed is required with --aggregator mace");
                    };
                    Aggregator::Mace {
                        config: aggregation.config(seed),
                        keep_fraction,
                    }
                }
            };
            let config = PipelineConfig {
                aggregator,
                logic_threshold,
                manifest: dir.manifest()?,
            };
            let responses = read_responses(&responses)?;
            let report = dir.run(stage, &responses, &config)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        PipelineCommand::Distractors {
            state,
            embeddings,
            stage,
            out,
        } => {
            let dir = StateDir::new(state);
            let records = dir.read_stage(stage)?;
            let embedder = MeanWordEmbedder::load(&embeddings)?;
            let (tasks, prep) = prepare_validation_tasks(&records, &embedder)?;
            write_jsonl(&out, &tasks)?;
            println!("tasks\t{}", tasks.len());
            println!("without_pool\t{}", prep.without_pool.len());
            println!("zero_norm\t{}", prep.zero_norm.len());
        }
        PipelineCommand::Resolve { state } => {
            let rejected = StateDir::new(state).resolve()?;
            println!("rejected\t{}", rejected.len());
        }
        PipelineCommand::Assemble {
            state,
            debates,
            seed,
            out,
        } => {
            let dir = StateDir::new(state);
            let records = dir.read_stage(arct_core::pipeline::LAST_STAGE)?;
            let debates = load_debates(&debates)?;
            let (instances, report) = arct_core::pipeline::assemble_instances(&records, &debates, seed)?;
            save_instances(&out, &instances, InstanceFormat::from_path(&out))?;
            println!("instances\t{}", instances.len());
            println!("excluded_disputed\t{}", report.excluded_disputed.len());
            println!("excluded_identical\t{}", report.excluded_identical.len());
        }
    }
    Ok(())
}

fn train_lm(a: TrainLmArgs) -> Result<()> {
    let sentences = read_corpus(&a.corpus)?;
    let model = train_kn(&sentences, a.order, a.max_vocab)?;
    model.save(&a.out)?;
    for (i, d) in model.discounts().iter().enumerate() {
        if d.fallback {
            eprintln!("note: order {} uses the single discount {:.6}", i + 1, d.d1);
        }
    }
    println!("vocab\t{}", model.vocab().len());
    Ok(())
}

fn lm_eval(a: LmEvalArgs) -> Result<()> {
    let model = LanguageModel::load(&a.model)?;
    let gold = instances(&a.instances)?;
    let labels: Vec<u8> = gold.iter().map(|i| lm_choose(&model, i, a.with_context)).collect();
    let preds = predictions_from(&gold, &labels);
    if let Some(path) = &a.pred_out {
        let mut out = create(path)?;
        write_predictions_csv(&mut out, &preds)?;
        out.flush()?;
    }
    println!("accuracy\t{:.6}", accuracy(&preds, &gold)?);
    Ok(())
}

fn run_log_path(base: &Path, run: usize, runs: usize) -> PathBuf {
    if runs == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.run{run}.{ext}"),
        None => format!("{stem}.run{run}"),
    };
    base.with_file_name(name)
}

fn train_neural(a: TrainNeuralArgs) -> Result<()> {
    let split = match (&a.train, &a.instances) {
        (Some(train), None) => DataSplit {
            train: instances(train)?,
            dev: instances(a.dev.as_ref().expect("clap enforces --dev"))?,
            test: match &a.test {
                Some(t) => instances(t)?,
                None => Vec::new(),
            },
        },
        (None, Some(all)) => {
            let debates = load_debates(a.debates.as_ref().expect("clap enforces --debates"))?;
            split_by_year(&instances(all)?, &debates)?
        }
        _ => return usage("give either --train/--dev[/--test] or --instances/--debates"),
    };
    if a.pred_out.is_some() && split.test.is_empty() {
        return usage("--pred-out needs test instances");
    }
    let pretrained = match &a.embeddings {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Some(WordVectors::parse(&text).map_err(|m| anyhow::anyhow!("{}: {m}", p.display()))?)
        }
        None => None,
    };
    let dims = Dims::new(a.embedding_dim, a.hidden);
    let config = TrainConfig {
        dropout_rate: a.dropout,
        patience_epochs: a.patience,
        max_epochs: a.max_epochs,
        runs: a.runs,
        seed: a.seed,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        dims,
        train_embeddings: !a.freeze_embeddings,
        ..TrainConfig::default()
    };
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    let results = train_runs(&split, &config, a.variant, pretrained.as_ref())?;
    let mut run_report = RunReport::new(
        a.approach.as_deref().unwrap_or(a.variant.display_name()),
        Vec::new(),
        Vec::new(),
    );
    let mut best: Option<(f64, usize)> = None;
    for (r, (model, history)) in results.iter().enumerate() {
        let dev_acc = accuracy(&predictions_from(&split.dev, &predict(model, &split.dev)?), &split.dev)?;
        run_report.dev.push(dev_acc);
        let mut line = format!("run\t{r}\tepochs\t{}\tdev_acc\t{dev_acc:.6}", history.len());
        if !split.test.is_empty() {
            let test_acc = accuracy(&predictions_from(&split.test, &predict(model, &split.test)?), &split.test)?;
            run_report.test.push(test_acc);
            line.push_str(&format!("\ttest_acc\t{test_acc:.6}"));
        }
        println!("{line}");
        if best.map_or(true, |(b, _)| dev_acc > b) {
            best = Some((dev_acc, r));
        }
        if let Some(log) = &a.log {
            let mut out = create(&run_log_path(log, r, results.len()))?;
            write_history_csv(&mut out, history)?;
            out.flush()?;
        }
    }
    let (_, best_run) = best.expect("at least one run");
    let model: &NeuralModel = &results[best_run].0;
    model.save(&a.out)?;
    if let Some(path) = &a.pred_out {
        let preds = predictions_from(&split.test, &predict(model, &split.test)?);
        let mut out = create(path)?;
        write_predictions_csv(&mut out, &preds)?;
        out.flush()?;
    }
    if let Some(path) = &a.report_out {
        fs::write(path, serde_json::to_string_pretty(&run_report)? + "\n")?;
    }
    let (mean, std) = mean_std(&run_report.dev);
    println!("dev_mean\t{mean:.6}\tdev_std\t{std:.6}\tbest_run\t{best_run}");
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let gold = instances(&a.gold)?;
    let (accs, approach) = if a.random {
        if a.runs == 0 {
            return usage("--runs must be at least 1");
        }
        let seed = a.seed.expect("clap enforces --seed");
        let accs = (0..a.runs as u64)
            .map(|r| {
                let s = if a.runs == 1 { seed } else { derive_seed(seed, r) };
                accuracy(&random_baseline(&gold, s), &gold)
            })
            .collect::<std::result::Result<Vec<f64>, _>>()?;
        (accs, "Random baseline")
    } else {
        let preds = read_predictions_csv(a.pred.as_ref().expect("clap enforces --pred"))?;
        (vec![accuracy(&preds, &gold)?], "Predictions")
    };
    let (mean, std) = mean_std(&accs);
    println!("accuracy\t{mean:.6}");
    if accs.len() > 1 {
        println!("std\t{std:.6}");
    }
    if let Some(path) = &a.report_out {
        let name = a.approach.as_deref().unwrap_or(approach);
        let rr = match a.split {
            SplitName::Dev => RunReport::new(name, accs, Vec::new()),
            SplitName::Test => RunReport::new(name, Vec::new(), accs),
        };
        fs::write(path, serde_json::to_string_pretty(&rr)? + "\n")?;
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for path in &a.runs {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?;
        let parsed: Vec<RunReport> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|r| vec![r])
        }
        .with_context(|| format!("{}: not a run report", path.display()))?;
        runs.extend(parsed);
    }
    let table = report(&runs);
    let text = table.to_text();
    print!("{text}");
    if let Some(path) = &a.out {
        fs::write(path, &text)?;
    }
    if let Some(path) = &a.json_out {
        fs::write(path, table.to_json())?;
    }
    Ok(())
}
