//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{BuildOptions, Dataset, Partition};
use crate::des::{self, ProcessorConfig};
use crate::error::{Error, Result};
use crate::predictor::{self, class_of, CnnConfig, CnnModel, TrainOptions};
use crate::report::{mean_prediction_errors, ErrorReport, PhaseComparison, WorkloadCpi};
use crate::sim::{
    simulate, simulate_parallel, CnnPredictor, LatencyPredictor, OraclePredictor,
    ParallelOptions, SimConfig,
};
use crate::trace::{self, AnnotatedInstruction, FeatureLayout};
use crate::workload::{self, WorkloadKind, WorkloadSpec};

#[derive(Parser, Debug)]
#[command(name = "insnsim", version, about = "Instruction-latency simulator toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic program.
    GenWorkload(GenWorkload),
    /// Run the reference simulator and write an annotated trace.
    DesRun(DesRun),
    /// Build a training dataset from traces.
    BuildDataset(BuildDataset),
    /// Train a latency predictor.
    Train(Train),
    /// Simulate a trace with a trained model or the oracle.
    Simulate(Simulate),
    /// Report prediction and CPI errors of a model.
    Evaluate(Evaluate),
}

#[derive(Args, Debug)]
pub struct GenWorkload {
    /// Workload spec file (JSON or TOML).
    #[arg(long, conflicts_with = "kind")]
    pub spec: Option<PathBuf>,
    /// Preset kind used when no spec file is given.
    #[arg(long, default_value = "mix")]
    pub kind: String,
    #[arg(long, default_value_t = 100_000)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DesRun {
    #[arg(long)]
    pub program: PathBuf,
    /// Processor config (JSON or TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Summary statistics CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildDataset {
    #[arg(long, num_args = 1.., required = true)]
    pub trace: Vec<PathBuf>,
    /// `default` or a context length.
    #[arg(long, default_value = "default")]
    pub layout: String,
    #[arg(long)]
    pub dedup: bool,
    #[arg(long, default_value = "90,5,5")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Train {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "c3")]
    pub preset: String,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    /// Cosine-decay the learning rate to this fraction of `--lr`.
    #[arg(long, default_value_t = 1.0)]
    pub final_lr_ratio: f64,
    /// Continue from an existing model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Simulate {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    /// Replay the latencies recorded in the trace.
    #[arg(long)]
    pub oracle: bool,
    /// Number of sub-traces.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Minimum sub-trace length; implies `--parallel`.
    #[arg(long)]
    pub subtrace_size: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub batch_max: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Phase-CPI window; defaults to 1% of the trace.
    #[arg(long)]
    pub window: Option<u64>,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-window CPI CSV.
    #[arg(long)]
    pub windows: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Evaluate {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset whose test partition is scored.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Traces to simulate and compare against their recorded cycle counts.
    #[arg(long, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// Traces whose workloads were used for training.
    #[arg(long, num_args = 1..)]
    pub trained: Vec<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// Side-by-side phase CPI CSV.
    #[arg(long)]
    pub phases: Option<PathBuf>,
}

/// Reference cycle count recorded in a trace.
pub fn trace_total_cycles(trace: &[AnnotatedInstruction]) -> u64 {
    trace.iter().map(AnnotatedInstruction::exit_tick).max().unwrap_or(0)
}

fn parse_split(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("split {s:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("split {s:?} needs three ratios")))
}

fn parse_layout(s: &str) -> Result<FeatureLayout> {
    if s == "default" {
        return Ok(FeatureLayout::default());
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(FeatureLayout::new(n)),
        _ => Err(Error::InvalidArgument(format!("unknown layout {s:?}"))),
    }
}

/// Number of sub-traces from `--parallel` and `--subtrace-size`.
pub fn resolve_sub_traces(n: usize, parallel: Option<usize>, size: Option<usize>) -> Result<usize> {
    let from_size = match size {
        Some(0) => return Err(Error::InvalidArgument("--subtrace-size must be positive".into())),
        Some(m) => Some((n / m).max(1)),
        None => None,
    };
    match (parallel, from_size) {
        (Some(k), Some(d)) if k != d => Err(Error::InvalidArgument(format!(
            "--parallel {k} disagrees with --subtrace-size {} ({d} sub-traces)",
            size.unwrap()
        ))),
        (Some(k), _) => Ok(k),
        (None, Some(d)) => Ok(d),
        (None, None) => Ok(1),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorkload(a) => gen_workload(a),
        Command::DesRun(a) => des_run(a),
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn gen_workload(a: GenWorkload) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => WorkloadSpec::load(p)?,
        None => {
            let kind = WorkloadKind::parse(&a.kind)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown workload kind {:?}", a.kind)))?;
            WorkloadSpec::preset(kind, a.count, a.seed)
        }
    };
    let program = workload::generate(&spec)?;
    workload::write_program(&a.out, &program)
}

fn des_run(a: DesRun) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ProcessorConfig::load(p)?,
        None => ProcessorConfig::default(),
    };
    let program = workload::read_program(&a.program)?;
    let result = des::simulate(&program, &cfg)?;
    trace::write_trace(&a.out, &result.trace, cfg.hash())?;
    if let Some(stats) = &a.stats {
        write_text(stats, &result.stats.to_csv())?;
    }
    Ok(())
}

fn build_dataset(a: BuildDataset) -> Result<()> {
    let traces = a
        .trace
        .iter()
        .map(trace::read_trace)
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[AnnotatedInstruction]> = traces.iter().map(Vec::as_slice).collect();
    let opts = BuildOptions {
        layout: parse_layout(&a.layout)?,
        dedup: a.dedup,
        split: parse_split(&a.split)?,
    };
    Dataset::build(&refs, &opts)?.write(&a.out)
}

fn train(a: Train) -> Result<()> {
    let ds = Dataset::read(&a.dataset)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        samples_per_epoch: a.samples_per_epoch,
        final_lr_ratio: a.final_lr_ratio,
    };
    let outcome = match &a.init {
        Some(p) => predictor::train_from(CnnModel::read(p)?, &ds, &opts)?,
        None => predictor::train(&ds, &CnnConfig::preset(&a.preset, &ds.layout)?, &opts)?,
    };
    for e in &outcome.epochs {
        eprintln!(
            "epoch {} train_loss {:.6} validation_loss {:.6}",
            e.epoch, e.train_loss, e.validation_loss
        );
    }
    outcome.model.write(&a.out)
}

fn load_predictor(model: Option<&Path>, oracle: bool, trace: &[AnnotatedInstruction]) -> Result<(Box<dyn LatencyPredictor>, usize)> {
    if oracle {
        return Ok((Box::new(OraclePredictor::new(trace)), FeatureLayout::default().max_context));
    }
    let path = model.ok_or_else(|| Error::InvalidArgument("--model or --oracle is required".into()))?;
    let m = CnnModel::read(path)?;
    let ctx = m.layout.max_context;
    Ok((Box::new(CnnPredictor::new(m)), ctx))
}

fn simulate_cmd(a: Simulate) -> Result<()> {
    let trace = trace::read_trace(&a.trace)?;
    let (predictor, max_context) = load_predictor(a.model.as_deref(), a.oracle, &trace)?;
    let cfg = SimConfig {
        max_context,
        window: a.window.unwrap_or((trace.len() as u64 / 100).max(1)),
        ..SimConfig::default()
    };
    let k = resolve_sub_traces(trace.len(), a.parallel, a.subtrace_size)?;
    let (summary, windows) = if k == 1 && a.parallel.is_none() && a.subtrace_size.is_none() {
        let r = simulate(&trace, predictor.as_ref(), &cfg)?;
        (r.summary_csv(), r.windows_csv())
    } else {
        let opts = ParallelOptions {
            sub_traces: k,
            batch_max: a.batch_max,
            workers: a.workers,
        };
        let r = simulate_parallel(&trace, predictor.as_ref(), &cfg, &opts)?;
        let windows = crate::report::phase_cpi(&r.fetch_series(), cfg.window)?;
        let mut s = String::from("sub_traces,total_cycles,instruction_count,cpi\n");
        s.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.plan.len(),
            r.total_cycles,
            r.instruction_count,
            r.cpi
        ));
        (s, crate::report::windows_csv(&windows))
    };
    write_text(&a.report, &summary)?;
    if let Some(p) = &a.windows {
        write_text(p, &windows)?;
    }
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let model = CnnModel::read(&a.model)?;
    let mut report = ErrorReport::default();
    if let Some(path) = &a.dataset {
        let ds = Dataset::read(path)?;
        let test = ds.indices(Partition::Test);
        let preds = predictor::predict_samples(&model, &ds, &test, 256);
        let truth: Vec<_> = test.iter().map(|&s| ds.label(s)).collect();
        let latencies: Vec<_> = preds.iter().map(|p| p.latency).collect();
        report.head_errors = Some(mean_prediction_errors(&latencies, &truth)?);
        let classes = model.config.class_counts[0];
        let correct = preds
            .iter()
            .zip(&truth)
            .filter(|(p, t)| p.classes[0] == class_of(t.fetch, classes))
            .count();
        report.fetch_class_accuracy = Some(correct as f64 / test.len().max(1) as f64);
    }
    let cfg = SimConfig {
        max_context: model.layout.max_context,
        ..SimConfig::default()
    };
    let predictor = CnnPredictor::new(model);
    let mut phases = String::new();
    for path in a.trace.iter().chain(&a.trained) {
        let trace = trace::read_trace(path)?;
        let name = path.display().to_string();
        let reference = trace_total_cycles(&trace) as f64 / trace.len().max(1) as f64;
        let r = simulate(&trace, &predictor, &cfg)?;
        report
            .workloads
            .push(WorkloadCpi::new(&name, reference, r.cpi, a.trained.contains(path))?);
        let window = (trace.len() as u64 / 100).max(1);
        let truth: Vec<u32> = trace.iter().map(|t| t.truth.fetch).collect();
        let model_fetch: Vec<u32> = r.predictions.iter().map(|p| p.fetch).collect();
        let cmp = PhaseComparison::new(&name, &truth, &model_fetch, window)?;
        let csv = cmp.to_csv();
        phases.push_str(if phases.is_empty() { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
        report.phases.push(cmp);
    }
    write_text(&a.report, &report.to_csv())?;
    if let Some(p) = &a.phases {
        write_text(p, &phases)?;
    }
    Ok(())
}

/// Machine-readable error line for stderr.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
