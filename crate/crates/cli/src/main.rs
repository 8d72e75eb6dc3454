//! `tdha`: few-shot evaluation harness over embedding bundles.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tdha_core::data::{self, generate_synthetic, read_bundle, write_bundle, EmbeddingBundle, SyntheticParams};
use tdha_core::eval::{self, EvalSettings, Grid, SweepParam, DEFAULT_ALPHA_GRID};
use tdha_core::geomcheck::{self, CheckSizes};
use tdha_core::inference::{DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_TAU};
use tdha_core::prototype::DEFAULT_SCALE;
use tdha_core::textbank::AggregateMode;
use tdha_core::{Components, FusionConfig, MeanMode, Metric};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "tdha", version, about = "Training-free few-shot classification with dual hyperbolic adapters")]
struct Cli {
    /// Worker threads (falls back to TDHA_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one configuration over N-shot episodes.
    Eval(EvalArgs),
    /// Cumulative component ablation: itp+, +itp-, +iip+, +iip-.
    Ablate(CommonArgs),
    /// Accuracy as a function of alpha, epsilon or scale.
    Sweep(SweepArgs),
    /// Hyperbolic distance versus cosine similarity in the image streams.
    CompareMetric(CommonArgs),
    /// Positive streams versus negative streams versus both.
    ComparePolarity(CommonArgs),
    /// Write a synthetic hierarchical bundle.
    Synth(SynthArgs),
    /// Run the geometry invariant suite.
    GeomCheck(GeomArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum NegMean {
    Ambient,
    Tangent,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Hd,
    Ecs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateArg {
    Normalized,
    Raw,
}

#[derive(Args)]
struct CommonArgs {
    /// Bundle directory providing the support (train) split and text banks.
    #[arg(long)]
    bundle: PathBuf,
    /// Bundle whose test split is classified instead of the source bundle's.
    #[arg(long)]
    test_bundle: Option<PathBuf>,
    /// Comma-separated shot counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    shots: Vec<usize>,
    #[arg(long, default_value_t = eval::DEFAULT_EPISODES)]
    episodes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: f64,
    #[arg(long, value_enum, default_value = "ambient")]
    neg_mean: NegMean,
    #[arg(long, value_enum, default_value = "hd")]
    metric: MetricArg,
    /// Prompt ensembling: normalise-then-average, or plain average.
    #[arg(long, value_enum, default_value = "normalized")]
    aggregate: AggregateArg,
    /// Report final scores divided by their sum.
    #[arg(long)]
    renormalize: bool,
    /// Report file; the human summary always goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Enabled streams, from iip+, iip-, itp+, itp-.
    #[arg(long, default_value = "iip+,iip-,itp+,itp-", value_parser = parse_components)]
    components: Components,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "iip+,iip-,itp+,itp-", value_parser = parse_components)]
    components: Components,
    #[arg(long, default_value = "alpha", value_parser = parse_sweep_param)]
    param: SweepParam,
    /// start:stop:step, inclusive.
    #[arg(long, default_value = DEFAULT_ALPHA_GRID, value_parser = parse_grid)]
    grid: Grid,
}

#[derive(Args)]
struct SynthArgs {
    /// Output bundle directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 4)]
    super_count: usize,
    #[arg(long, default_value_t = 4)]
    classes_per_super: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.35)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.15)]
    modality_gap: f64,
    #[arg(long, default_value_t = 64)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeomArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_components(s: &str) -> Result<Components, String> {
    s.parse().map_err(|e: tdha_core::Error| e.to_string())
}

fn parse_sweep_param(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e: tdha_core::Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    Grid::parse(s).map_err(|e| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<tdha_core::Error> for Failure {
    fn from(e: tdha_core::Error) -> Self {
        let code = match e {
            tdha_core::Error::InvalidInput(_) | tdha_core::Error::Format(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<data::DataError> for Failure {
    fn from(e: data::DataError) -> Self {
        Self { code: EXIT_DATA, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

impl CommonArgs {
    fn settings(&self, components: Components) -> CliResult<EvalSettings> {
        let s = EvalSettings {
            shots: self.shots.clone(),
            episodes: self.episodes,
            seed: self.seed,
            fusion: FusionConfig {
                alpha: self.alpha,
                epsilon: self.epsilon,
                tau: self.tau,
                components,
                metric: match self.metric {
                    MetricArg::Hd => Metric::Hd,
                    MetricArg::Ecs => Metric::Ecs,
                },
                renormalize: self.renormalize,
            },
            scale: self.scale,
            mean_mode: match self.neg_mean {
                NegMean::Ambient => MeanMode::Ambient,
                NegMean::Tangent => MeanMode::Tangent,
            },
            aggregate: match self.aggregate {
                AggregateArg::Normalized => AggregateMode::Normalized,
                AggregateArg::Raw => AggregateMode::Raw,
            },
        };
        s.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(s)
    }

    fn load(&self) -> CliResult<(EmbeddingBundle, Option<EmbeddingBundle>)> {
        let source = read_bundle(&self.bundle)?;
        for w in source.warnings() {
            eprintln!("warning: {w}");
        }
        let target = self.test_bundle.as_deref().map(read_bundle).transpose()?;
        Ok((source, target))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    if let Some(p) = path {
        fs::write(p, text).map_err(|e| Failure { code: EXIT_DATA, message: format!("cannot write {}: {e}", p.display()) })?;
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialise") + "\n"
}

fn eval_csv(report: &eval::EvalReport) -> String {
    let mut s = String::from("shots,episode,correct,total,accuracy\n");
    for r in &report.results {
        for e in &r.episodes {
            s.push_str(&format!("{},{},{},{},{}\n", r.shots, e.episode_index, e.correct, e.total, e.accuracy));
        }
    }
    s
}

fn eval_markdown(report: &eval::EvalReport) -> String {
    let mut s = String::from("| shots | mean | std | episodes |\n|---:|---:|---:|---:|\n");
    for r in &report.results {
        s.push_str(&format!("| {} | {:.4} | {:.4} | {} |\n", r.shots, r.mean, r.std, r.episodes.len()));
    }
    s
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    let c = &args.common;
    let settings = c.settings(args.components)?;
    let (source, target) = c.load()?;
    let report = eval::run_eval(&source, target.as_ref(), &settings)?;
    for d in &report.diagnostics {
        eprintln!("diagnostic: {d}");
    }
    print!("{}", report.summary());
    let text = match c.format {
        Format::Json => to_json(&report),
        Format::Csv => eval_csv(&report),
        Format::Md => eval_markdown(&report),
    };
    write_output(c.output.as_deref(), &text)
}

fn cmd_table(c: &CommonArgs, run: fn(&EmbeddingBundle, Option<&EmbeddingBundle>, &EvalSettings) -> tdha_core::Result<eval::TableReport>) -> CliResult {
    let settings = c.settings(Components::FULL)?;
    let (source, target) = c.load()?;
    let table = run(&source, target.as_ref(), &settings)?;
    print!("{}", table.to_markdown());
    let text = match c.format {
        Format::Json => to_json(&table),
        Format::Csv => table.to_csv(),
        Format::Md => table.to_markdown(),
    };
    write_output(c.output.as_deref(), &text)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let c = &args.common;
    let settings = c.settings(args.components)?;
    let (source, target) = c.load()?;
    let report = eval::run_sweep(&source, target.as_ref(), &settings, args.param, &args.grid)?;
    print!("{}", report.to_markdown());
    let text = match c.format {
        Format::Json => to_json(&report),
        Format::Csv => report.to_csv(),
        Format::Md => report.to_markdown(),
    };
    write_output(c.output.as_deref(), &text)
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let params = SyntheticParams {
        super_count: args.super_count,
        classes_per_super: args.classes_per_super,
        dim: args.dim,
        noise_sigma: args.noise_sigma,
        modality_gap: args.modality_gap,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        seed: args.seed,
    };
    let bundle = generate_synthetic(&params).map_err(|e| match e {
        data::DataError::Validation(m) => Failure::usage(m),
        other => other.into(),
    })?;
    write_bundle(&bundle, &args.output)?;
    println!(
        "wrote {} classes x ({} train + {} test), dim {} to {}",
        bundle.class_count(),
        args.train_per_class,
        args.test_per_class,
        bundle.dim,
        args.output.display()
    );
    Ok(())
}

fn cmd_geom_check(args: &GeomArgs) -> CliResult {
    let report = geomcheck::run_checks(geomcheck::reference_distance, &CheckSizes::default(), args.seed);
    print!("{}", report.summary());
    write_output(args.output.as_deref(), &to_json(&report))?;
    if !report.passed {
        return Err(Failure { code: EXIT_INVARIANT, message: "geometry invariant check failed".into() });
    }
    Ok(())
}

fn configure_threads(flag: Option<usize>) -> CliResult {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("TDHA_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::usage(format!("TDHA_THREADS={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: EXIT_INVARIANT, message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_table(a, eval::run_ablation),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CompareMetric(a) => cmd_table(a, eval::run_metric_comparison),
        Command::ComparePolarity(a) => cmd_table(a, eval::run_polarity_comparison),
        Command::Synth(a) => cmd_synth(a),
        Command::GeomCheck(a) => cmd_geom_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
