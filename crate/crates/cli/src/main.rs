//! `reliakit` command line: trace validation, summaries, paired comparisons,
//! simulations and the stub harness.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid input data or
//! arguments, 3 statistical precondition violated (k outside 1..=n, alpha
//! outside (0, 1)).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reliakit::harness::stub::{RunnerSpec, TemplateFeedbackProvider, VersionedPlanExtractor};
use reliakit::harness::{
    run_suite, HarnessError, ProtocolChoice, RetryKind, RetryProtocol, SuiteConfig, Task, DEFAULT_RETRY_BUDGET,
};
use reliakit::ingest::{parse_records, write_records, Dataset, IngestError, TraceRecord, DEFAULT_THRESHOLD};
use reliakit::metrics::default_ks;
use reliakit::paired::{McNemarMethod, WilcoxonMethod, WilcoxonOptions, ZeroMethod, DEFAULT_ALPHA};
use reliakit::report::{render_report, ReportDocument, ReportFormat};
use reliakit::simlab::{self, CalibrationConfig, RetryExperimentConfig, UnbiasednessConfig};
use reliakit::{
    align_paired, compare_with, parse_k_list, setting_summary, CompareOptions, MetricsError, OutcomeError, PairedError,
    SettingLabel, TaskId,
};

#[derive(Parser)]
#[command(name = "reliakit", version, about = "Repeated-run reliability metrics and paired tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a trace file and list its settings.
    Ingest(IngestArgs),
    /// pass^k, pass@k and reliability categories per setting.
    Summarize(SummarizeArgs),
    /// Paired McNemar and Wilcoxon comparison against a base setting.
    Compare(CompareArgs),
    /// Monte Carlo checks of the estimators and tests.
    Simulate(SimulateArgs),
    /// Drive a stub runner through a rollout protocol and write traces.
    #[command(subcommand)]
    Harness(HarnessCommand),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Settings to summarize; all settings when omitted.
    #[arg(long)]
    setting: Vec<String>,
    /// Comma-separated k values; defaults to 1 and n.
    #[arg(long)]
    k: Option<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum McNemarArg {
    Auto,
    ChiSquare,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum WilcoxonArg {
    Auto,
    Exact,
    Normal,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroArg {
    Wilcox,
    Pratt,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    base: String,
    /// Settings compared against the base; repeat for several.
    #[arg(long, required = true)]
    new: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    k: Option<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long, value_enum, default_value = "auto")]
    mcnemar_mode: McNemarArg,
    #[arg(long, value_enum, default_value = "auto")]
    wilcoxon_mode: WilcoxonArg,
    #[arg(long, value_enum, default_value = "wilcox")]
    zero_method: ZeroArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Unbiasedness,
    Calibration,
    Divergence,
    Retry,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Trials (calibration), repetitions (unbiasedness) or episodes (retry).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    k: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    p0: f64,
    #[arg(long, default_value_t = 0.6)]
    p1: f64,
    #[arg(long, default_value_t = DEFAULT_RETRY_BUDGET)]
    budget: u32,
}

#[derive(Subcommand)]
enum HarnessCommand {
    Run(HarnessRunArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    None,
    RetryBinary,
    RetryClarify,
    PlanIterate,
}

#[derive(Args)]
struct HarnessRunArgs {
    #[arg(long, value_enum, default_value = "none")]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = 3)]
    n: u32,
    #[arg(long, default_value_t = DEFAULT_RETRY_BUDGET)]
    budget: u32,
    /// Plan refinement rounds after iteration 0.
    #[arg(long, default_value_t = 2)]
    iterations: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stub runner, e.g. `bernoulli:p=0.5` or `uplift:p0=0.3,p1=0.6`.
    #[arg(long, default_value = "bernoulli:p=0.5")]
    runner: String,
    /// Number of synthetic tasks.
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    /// Setting name for non-iterative protocols; defaults to the protocol name.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    reset_between_attempts: bool,
    /// JSONL output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    fn statistical(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<io::Error> for Failure {
    fn from(error: io::Error) -> Self {
        Self { code: 1, error: error.into() }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) => Self { code: 1, error: e.into() },
            _ => Self::validation(e),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::KOutOfRange { .. } => Self::statistical(e),
            MetricsError::InvalidKList(_) => Self::validation(e),
        }
    }
}

impl From<PairedError> for Failure {
    fn from(e: PairedError) -> Self {
        match e {
            PairedError::InvalidAlpha(_) => Self::statistical(e),
            PairedError::Metrics(m) => m.into(),
            PairedError::Outcome(_) => Self::validation(e),
        }
    }
}

impl From<OutcomeError> for Failure {
    fn from(e: OutcomeError) -> Self {
        Self::validation(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::validation(e)
    }
}

impl From<simlab::SimError> for Failure {
    fn from(e: simlab::SimError) -> Self {
        match e {
            simlab::SimError::Metrics(m) => m.into(),
            simlab::SimError::Paired(p) => p.into(),
            other => Self::validation(other),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Summarize(a) => summarize(a),
        Command::Compare(a) => compare(a),
        Command::Simulate(a) => simulate(a),
        Command::Harness(HarnessCommand::Run(a)) => harness_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reads traces, printing every diagnostic to stderr. Any diagnostic is a
/// validation failure: a partly readable trace cannot give trustworthy counts.
fn load_records(path: &Path) -> Result<Vec<TraceRecord>, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (records, diagnostics) = parse_records(BufReader::new(file))?;
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("{}: {d}", path.display());
        }
        return Err(Failure::validation(anyhow!(
            "{} malformed line(s) in {}",
            diagnostics.len(),
            path.display()
        )));
    }
    Ok(records)
}

/// Loads a dataset plus report notes describing how it was produced.
fn load_dataset(path: &Path, threshold: f64) -> Result<(Dataset, Vec<String>), Failure> {
    let records = load_records(path)?;
    let mut notes = vec![format!("success: score >= {threshold}")];
    let from_retry = records
        .iter()
        .any(|r| r.meta.get("protocol").is_some_and(|p| p.starts_with("retry")));
    if from_retry {
        notes.push("retry runs are isolated: feedback never crosses repetitions of a task".into());
    }
    let dataset = Dataset::from_records(records, threshold)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    Ok((dataset, notes))
}

fn parse_format(text: &str) -> Result<ReportFormat, Failure> {
    text.parse().map_err(Failure::validation)
}

fn ks_for(k: Option<&str>, n: usize) -> Result<Vec<usize>, Failure> {
    Ok(match k {
        Some(text) => parse_k_list(text)?,
        None => default_ks(n),
    })
}

fn ingest(args: IngestArgs) -> CliResult {
    let file = File::open(&args.traces).with_context(|| format!("opening {}", args.traces.display()))?;
    let (records, diagnostics) = parse_records(BufReader::new(file))?;
    for d in &diagnostics {
        eprintln!("{}: {d}", args.traces.display());
    }
    let dataset = Dataset::from_records(records, args.threshold)?;
    for w in &dataset.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = io::stdout().lock();
    for (name, m) in &dataset.matrices {
        writeln!(out, "{name}\t{} tasks\tn={}", m.task_count(), m.n())?;
    }
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(Failure::validation(anyhow!("{} malformed line(s)", diagnostics.len())))
    }
}

fn summarize(args: SummarizeArgs) -> CliResult {
    let format = parse_format(&args.format)?;
    let (dataset, notes) = load_dataset(&args.traces, args.threshold)?;
    let names: Vec<String> = if args.setting.is_empty() {
        dataset.matrices.keys().cloned().collect()
    } else {
        args.setting.clone()
    };
    let mut summaries = Vec::new();
    for name in &names {
        let m = dataset.matrix(name)?;
        let ks = ks_for(args.k.as_deref(), m.n())?;
        summaries.push(setting_summary(m, &ks)?);
    }
    let doc = ReportDocument {
        summaries,
        comparisons: Vec::new(),
        notes,
        format,
    };
    let mut out = open_output(None)?;
    out.write_all(&render_report(&doc))?;
    out.flush()?;
    Ok(())
}

fn compare(args: CompareArgs) -> CliResult {
    let format = parse_format(&args.format)?;
    let (dataset, notes) = load_dataset(&args.traces, args.threshold)?;
    let base = dataset.matrix(&args.base)?;
    let mut comparisons = Vec::new();
    for name in &args.new {
        let new = dataset.matrix(name)?;
        let paired = align_paired(base.clone(), new.clone())?;
        let options = CompareOptions {
            alpha: args.alpha,
            ks: ks_for(args.k.as_deref(), paired.n())?,
            mcnemar: match args.mcnemar_mode {
                McNemarArg::Auto => McNemarMethod::Auto,
                McNemarArg::ChiSquare => McNemarMethod::ChiSquare,
                McNemarArg::Exact => McNemarMethod::ExactBinomial,
            },
            wilcoxon: WilcoxonOptions {
                method: match args.wilcoxon_mode {
                    WilcoxonArg::Auto => WilcoxonMethod::Auto,
                    WilcoxonArg::Exact => WilcoxonMethod::Exact,
                    WilcoxonArg::Normal => WilcoxonMethod::NormalApprox,
                },
                zero_method: match args.zero_method {
                    ZeroArg::Wilcox => ZeroMethod::Wilcox,
                    ZeroArg::Pratt => ZeroMethod::Pratt,
                },
            },
        };
        comparisons.push(compare_with(&paired, &options)?);
    }
    let doc = ReportDocument {
        summaries: Vec::new(),
        comparisons,
        notes,
        format,
    };
    let mut out = open_output(None)?;
    out.write_all(&render_report(&doc))?;
    out.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult {
    let mut out = open_output(args.out.as_deref())?;
    let csv_err = |e: csv::Error| Failure::from(anyhow::Error::from(e));
    match args.experiment {
        Experiment::Unbiasedness => {
            let mut config = UnbiasednessConfig::standard(args.seed);
            config.task_count = args.tasks.unwrap_or(config.task_count);
            config.n = args.n.unwrap_or(config.n);
            config.reps = args.trials.unwrap_or(config.reps);
            if let Some(k) = &args.k {
                config.ks = parse_k_list(k)?;
            }
            #[derive(serde::Serialize)]
            struct Row {
                metric: &'static str,
                k: usize,
                analytic: f64,
                mc_mean: f64,
                mc_se: f64,
                z: f64,
            }
            let rows: Vec<Row> = simlab::unbiasedness_experiment(&config)?
                .into_iter()
                .map(|c| Row {
                    z: c.z(),
                    metric: c.metric,
                    k: c.k,
                    analytic: c.analytic,
                    mc_mean: c.mc_mean,
                    mc_se: c.mc_se,
                })
                .collect();
            simlab::write_csv(&rows, &mut out).map_err(csv_err)?;
        }
        Experiment::Calibration => {
            let config = CalibrationConfig::new(
                args.tasks.unwrap_or(100),
                args.n.unwrap_or(3),
                args.trials.unwrap_or(10_000),
                args.alpha,
                args.seed,
            );
            let r = simlab::calibration_experiment(&config)?;
            #[derive(serde::Serialize)]
            struct Row {
                test: &'static str,
                trials: usize,
                rejections: usize,
                rate: f64,
                se: f64,
                alpha: f64,
            }
            let row = |test, rate: simlab::RejectionRate| Row {
                test,
                trials: r.trials,
                rejections: rate.rejections,
                rate: rate.rate,
                se: rate.se,
                alpha: args.alpha,
            };
            simlab::write_csv(&[row("mcnemar", r.mcnemar), row("wilcoxon", r.wilcoxon)], &mut out).map_err(csv_err)?;
        }
        Experiment::Divergence => {
            let curve = simlab::divergence_curve(args.n.unwrap_or(10), args.seed)?;
            simlab::write_csv(&curve, &mut out).map_err(csv_err)?;
        }
        Experiment::Retry => {
            let mut config = RetryExperimentConfig::standard(args.seed);
            config.p0 = args.p0;
            config.p1 = args.p1;
            config.budget = args.budget;
            if let Some(t) = args.trials {
                config.episodes = u32::try_from(t).map_err(|_| Failure::validation(anyhow!("too many episodes")))?;
            }
            let r = simlab::retry_experiment(&config)?;
            simlab::write_csv(&[r], &mut out).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn harness_run(args: HarnessRunArgs) -> CliResult {
    let spec: RunnerSpec = args.runner.parse().map_err(Failure::validation)?;
    let protocol = match args.protocol {
        ProtocolArg::None => ProtocolChoice::Repeated,
        ProtocolArg::RetryBinary | ProtocolArg::RetryClarify => {
            let kind = if args.protocol == ProtocolArg::RetryBinary {
                RetryKind::RetryBinary
            } else {
                RetryKind::RetryClarify
            };
            ProtocolChoice::Retry(
                RetryProtocol::new(kind, args.budget)?.with_reset_between_attempts(args.reset_between_attempts),
            )
        }
        ProtocolArg::PlanIterate => ProtocolChoice::PlanIterate {
            iterations: args.iterations,
        },
    };
    let setting_name = args.setting.clone().unwrap_or_else(|| match args.protocol {
        ProtocolArg::None => "none".to_string(),
        ProtocolArg::RetryBinary => "retry-binary".to_string(),
        ProtocolArg::RetryClarify => "retry-clarify".to_string(),
        ProtocolArg::PlanIterate => "plan-iterate".to_string(),
    });
    let tasks = (0..args.tasks)
        .map(|i| {
            Task::new(
                TaskId::new(format!("t{i:04}"))?,
                format!("synthetic task {i}"),
                format!("snapshot-{i}"),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = SuiteConfig {
        tasks,
        n: args.n,
        seed: args.seed,
        protocol,
        setting: SettingLabel::new(setting_name)?.with_meta("runner", spec.to_string()),
    };
    let mut runner = spec.build();
    let mut provider = TemplateFeedbackProvider;
    let mut extractor = VersionedPlanExtractor;
    let outcome = run_suite(&config, runner.as_mut(), Some(&mut provider), Some(&mut extractor))?;
    for d in &outcome.diagnostics {
        eprintln!("warning: {d}");
    }
    let records: Vec<TraceRecord> = outcome.episodes.iter().map(TraceRecord::from_episode).collect();
    let mut out = open_output(args.out.as_deref())?;
    write_records(&records, &mut out)?;
    out.flush()?;
    Ok(())
}
