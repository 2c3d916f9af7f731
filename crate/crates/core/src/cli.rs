//! The `biaslens` command line: analyze a labeled table, synthesize biased
//! datasets, verify the two propositions, train and sweep the debiasing
//! simulation, and convert result files into plottable matrices.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a verification
//! ran to completion and falsified its proposition.

use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io;
use crate::metrics;
use crate::sim::{self, Loss, Method, ModelKind, SweepAxis, TrainConfig, Transform};
use crate::synth::{self, FeatureLayout};
use crate::theory;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FALSIFIED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "biaslens",
    version,
    about = "Measure, synthesize, and stress-test spurious correlation in labeled datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Base seed for anything stochastic (falls back to the config file's
    /// seed, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Suppress status notes on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the target/spurious joint of a labeled table and report
    /// bias magnitude, prevalence, and the prior correlation measures.
    Analyze(AnalyzeArgs),
    /// Sample a labeled dataset from a bias configuration; also writes the
    /// exact generating joint as a heatmap sidecar.
    Synth(SynthArgs),
    /// Grid-check one of the two propositions and emit its report.
    Verify(VerifyArgs),
    /// Train once on a synthesized dataset and emit run metrics.
    Simulate(SimulateArgs),
    /// Train across an axis of bias configurations and seeds.
    Sweep(SweepArgs),
    /// Convert a metrics JSON into a plottable CSV matrix.
    Report(ReportArgs),
}

fn parse_delimiter(raw: &str) -> std::result::Result<u8, String> {
    let bytes = raw.as_bytes();
    if bytes.len() == 1 {
        Ok(bytes[0])
    } else {
        Err(format!("delimiter must be a single byte, got {raw:?}"))
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Labeled table (CSV by default).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Target column: a header name, or a 0-based index with --no-header.
    #[arg(long, value_name = "COLUMN")]
    pub target: String,

    /// Spurious column, same addressing as --target.
    #[arg(long, value_name = "COLUMN")]
    pub spurious: String,

    /// Decision threshold on bias magnitude, in nats.
    #[arg(long, default_value_t = metrics::DEFAULT_THETA)]
    pub theta: f64,

    /// Field delimiter.
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    pub delimiter: u8,

    /// Treat the first row as data; column selectors become indices.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("generator").required(true)))]
pub struct SynthArgs {
    /// Built-in configuration: lmlp, lmlp', hmlp, hmhp, or unbiased.
    #[arg(long, value_name = "NAME", group = "generator")]
    pub preset: Option<String>,

    /// Bias-configuration JSON file.
    #[arg(long, value_name = "FILE", group = "generator")]
    pub config: Option<PathBuf>,

    /// Number of samples to draw.
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Which proposition: 1 = prevalence bounds, 2 = magnitude limit curve.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub prop: u8,

    /// Threshold for proposition 1.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,

    /// Normalized magnitude for proposition 2.
    #[arg(long, default_value_t = 0.5)]
    pub phi: f64,

    /// Grid points per axis (at least 100).
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Erm,
    Dbam,
    DbamDid,
}

impl From<MethodArg> for Method {
    fn from(arg: MethodArg) -> Method {
        match arg {
            MethodArg::Erm => Method::Erm,
            MethodArg::Dbam => Method::Dbam,
            MethodArg::DbamDid => Method::DbamDid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BiasedLossArg {
    Ce,
    Gce,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Linear,
    Mlp,
}

impl From<ModelArg> for ModelKind {
    fn from(arg: ModelArg) -> ModelKind {
        match arg {
            ModelArg::Linear => ModelKind::Linear,
            ModelArg::Mlp => ModelKind::OneHiddenLayer,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Magnitude,
    Prevalence,
}

impl From<AxisArg> for SweepAxis {
    fn from(arg: AxisArg) -> SweepAxis {
        match arg {
            AxisArg::Magnitude => SweepAxis::Magnitude,
            AxisArg::Prevalence => SweepAxis::Prevalence,
        }
    }
}

/// Training knobs shared by `simulate` and `sweep`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training method.
    #[arg(long, value_enum)]
    pub method: MethodArg,

    /// Loss driving the biased auxiliary model.
    #[arg(long, value_enum, default_value_t = BiasedLossArg::Gce)]
    pub biased_loss: BiasedLossArg,

    /// Generalized cross entropy exponent.
    #[arg(long, default_value_t = 0.7)]
    pub q: f64,

    /// Passes over the training set.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    /// Classifier shape.
    #[arg(long, value_enum, default_value_t = ModelArg::Linear)]
    pub model: ModelArg,

    /// Training-set size.
    #[arg(long, default_value_t = 4000)]
    pub n_train: usize,

    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
}

impl TrainArgs {
    fn biased_loss(&self) -> Loss {
        match self.biased_loss {
            BiasedLossArg::Ce => Loss::Ce,
            BiasedLossArg::Gce => Loss::Gce { q: self.q },
        }
    }

    /// Assemble the training configuration; destruction always wipes the
    /// target-feature block of the given layout.
    fn config(&self, seed: u64, layout: &FeatureLayout) -> TrainConfig {
        TrainConfig {
            method: self.method.into(),
            model: self.model.into(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            biased_loss: self.biased_loss(),
            destruction: Transform::BlockPermute {
                start: 0,
                len: layout.target_dim,
            },
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("generator").required(true)))]
pub struct SimulateArgs {
    /// Built-in configuration: lmlp, lmlp', hmlp, hmhp, or unbiased.
    #[arg(long, value_name = "NAME", group = "generator")]
    pub preset: Option<String>,

    /// Bias-configuration JSON file.
    #[arg(long, value_name = "FILE", group = "generator")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// What the axis values change: every biased feature's conditional
    /// strength, or the number of biased features.
    #[arg(long, value_enum)]
    pub axis: AxisArg,

    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,

    /// Comma-separated seeds; every (value, seed) pair trains once.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,

    /// Conditional strength of biased features on the prevalence axis.
    #[arg(long, default_value_t = 0.98)]
    pub corr: f64,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    /// Per-epoch category weights from a single run.
    WeightsCsv,
    /// Value x seed accuracy matrix from a sweep.
    HeatmapCsv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics JSON produced by `simulate` or `sweep`.
    #[arg(long, value_name = "FILE")]
    pub from: PathBuf,

    #[arg(long, value_enum)]
    pub format: FormatArg,
}

/// Execute a parsed invocation and return the process exit code. `Err` maps
/// to exit 1 in `main`; usage problems not expressible to the parser return
/// `Ok(EXIT_USAGE)` after printing a message.
pub fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args, &ctx),
        Command::Synth(args) => cmd_synth(args, &ctx),
        Command::Verify(args) => cmd_verify(args, &ctx),
        Command::Simulate(args) => cmd_simulate(args, &ctx),
        Command::Sweep(args) => cmd_sweep(args, &ctx),
        Command::Report(args) => cmd_report(args, &ctx),
    }
}

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn status(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", message.as_ref());
        }
    }

    fn emit(&self, text: &str) -> Result<()> {
        io::emit(text, self.out.as_deref())
    }

    fn usage(&self, message: &str) -> Result<u8> {
        eprintln!("error: {message}");
        Ok(EXIT_USAGE)
    }
}

/// Honor BIASLENS_THREADS as a cap on worker parallelism.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BIASLENS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| Error::InvalidParams {
        reason: format!("BIASLENS_THREADS must be a positive integer, got {raw:?}"),
    })?;
    if threads == 0 {
        return Err(Error::InvalidParams {
            reason: "BIASLENS_THREADS must be at least 1".into(),
        });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParams {
            reason: format!("could not size the worker pool: {e}"),
        })
}

fn cmd_analyze(args: AnalyzeArgs, ctx: &Ctx) -> Result<u8> {
    let source = io::TabularSource {
        path: args.input,
        target_column: args.target,
        spurious_column: args.spurious,
        delimiter: args.delimiter,
        has_header: !args.no_header,
    };
    let joint = io::load_joint(&source)?;
    let report = metrics::analyze(&joint, args.theta)?;
    let file = io::report_file(&report, &joint);
    ctx.emit(&io::to_json_string(&file)?)?;
    ctx.status(format!(
        "analyzed {}: {}x{} joint, {} of {} spurious values biased at theta={}, prevalence {:.4}",
        source.path.display(),
        joint.n_target(),
        joint.n_spurious(),
        report.biased_set.len(),
        joint.n_spurious(),
        args.theta,
        report.prevalence,
    ));
    Ok(EXIT_OK)
}

/// Resolve --preset/--config into a generator, plus any seed the file set.
fn generator(
    preset: Option<&str>,
    config: Option<&Path>,
) -> Result<(synth::BiasConfig, FeatureLayout, Option<u64>, serde_json::Value)> {
    match (preset, config) {
        (Some(name), None) => {
            let cfg = synth::preset(name)?;
            Ok((cfg, FeatureLayout::default(), None, json!(name)))
        }
        (None, Some(path)) => {
            let file = io::read_config(path)?;
            let (cfg, layout, seed) = file.resolve()?;
            Ok((cfg, layout, seed, json!(path.display().to_string())))
        }
        // The parser's required group rules both other shapes out.
        _ => unreachable!("clap enforces exactly one generator source"),
    }
}

fn heatmap_sidecar(out: &Path) -> PathBuf {
    out.with_extension("heatmap.csv")
}

fn cmd_synth(args: SynthArgs, ctx: &Ctx) -> Result<u8> {
    let Some(out) = ctx.out.as_deref() else {
        return ctx.usage("synth writes a dataset file; pass --out FILE");
    };
    let (config, layout, file_seed, _) = generator(args.preset.as_deref(), args.config.as_deref())?;
    let seed = ctx.seed.or(file_seed).unwrap_or(0);
    let (joint, dataset) = synth::synthesize(&config, &layout, args.n, seed)?;
    io::write_dataset(&dataset, out)?;
    let sidecar = heatmap_sidecar(out);
    io::export_heatmap(&joint, &sidecar)?;
    ctx.status(format!(
        "wrote {} samples (seed {seed}) to {} and the exact joint to {}",
        args.n,
        out.display(),
        sidecar.display(),
    ));
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs, ctx: &Ctx) -> Result<u8> {
    let report = match args.prop {
        1 => theory::verify_prop1(args.theta, args.grid)?,
        2 => theory::verify_prop2(args.phi, args.grid)?,
        _ => unreachable!("clap bounds --prop to 1..=2"),
    };
    ctx.emit(&io::to_json_string(&report)?)?;
    ctx.status(format!(
        "proposition {}: {} checks, {} violations -> {}",
        args.prop,
        report.checked,
        report.violations,
        if report.passed { "passed" } else { "falsified" },
    ));
    Ok(if report.passed { EXIT_OK } else { EXIT_FALSIFIED })
}

fn cmd_simulate(args: SimulateArgs, ctx: &Ctx) -> Result<u8> {
    let (config, layout, file_seed, source) =
        generator(args.preset.as_deref(), args.config.as_deref())?;
    let seed = ctx.seed.or(file_seed).unwrap_or(0);
    let train_cfg = args.train.config(seed, &layout);
    let (_, dataset) = synth::synthesize(&config, &layout, args.train.n_train, seed)?;
    let outcome = sim::train(&dataset, &config, &train_cfg)?;
    let report = io::SimReport {
        config_echo: json!({
            "source": source,
            "bias_config": config,
            "feature_layout": layout,
            "n_train": args.train.n_train,
            "train": train_cfg,
        }),
        metrics: outcome.metrics,
    };
    ctx.emit(&io::to_json_string(&report)?)?;
    let finals = &report.metrics.final_metrics;
    ctx.status(format!(
        "trained {:?} for {} epochs (seed {seed}): avg {:.4}, worst {:.4}",
        train_cfg.method, train_cfg.epochs, finals.avg_acc, finals.worst_acc,
    ));
    Ok(EXIT_OK)
}

fn cmd_sweep(args: SweepArgs, ctx: &Ctx) -> Result<u8> {
    let layout = FeatureLayout::default();
    let base = synth::identity_config(
        layout.target_dim,
        layout.spurious_dim,
        layout.spurious_dim,
        args.corr,
    )?;
    let train_cfg = args.train.config(0, &layout);
    let request = sim::SweepRequest {
        axis: args.axis.into(),
        values: args.values.clone(),
        base,
        corr: args.corr,
        layout,
        n_train: args.train.n_train,
        train: train_cfg,
        seeds: args.seeds.clone(),
    };
    let table = sim::sweep(&request)?;
    let report = io::SweepReport {
        config_echo: json!({
            "axis": request.axis,
            "values": request.values,
            "seeds": request.seeds,
            "corr": request.corr,
            "bias_config_base": request.base,
            "feature_layout": request.layout,
            "n_train": request.n_train,
            "train": request.train,
        }),
        table,
    };
    ctx.emit(&io::to_json_string(&report)?)?;
    ctx.status(format!(
        "swept {} over {} values x {} seeds ({} runs)",
        report.table.axis,
        args.values.len(),
        args.seeds.len(),
        report.table.points.len(),
    ));
    Ok(EXIT_OK)
}

fn cmd_report(args: ReportArgs, ctx: &Ctx) -> Result<u8> {
    let loaded = io::read_metrics(&args.from)?;
    let text = match (&loaded, args.format) {
        (io::MetricsFile::Run(run), FormatArg::WeightsCsv) => io::weights_csv(&run.metrics),
        (io::MetricsFile::Sweep(sweep), FormatArg::HeatmapCsv) => {
            io::sweep_heatmap_csv(&sweep.table)
        }
        (io::MetricsFile::Run(_), FormatArg::HeatmapCsv) => {
            return Err(Error::InvalidParams {
                reason: "heatmap-csv needs a sweep metrics file".into(),
            })
        }
        (io::MetricsFile::Sweep(_), FormatArg::WeightsCsv) => {
            return Err(Error::InvalidParams {
                reason: "weights-csv needs a single-run metrics file".into(),
            })
        }
    };
    ctx.emit(&text)?;
    ctx.status(format!("converted {}", args.from.display()));
    Ok(EXIT_OK)
}
