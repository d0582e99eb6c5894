use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use featlens::adversary::{FdrAggregation, NeighborScope, RandomBaseline, DEFAULT_DIRICHLET_DRAWS, DEFAULT_EPSILON};
use featlens::archetypes::{Thresholds, TpNormalization};
use featlens::features::{DensityNorm, DEFAULT_TOP_K};
use featlens::pipeline::{run_pipeline, run_stages, OutputFormat, PipelineSummary, RunConfig, Stage, DEFAULT_K};
use featlens::report::read_json;
use featlens::synth::{write_synthetic, SyntheticSpec};

/// Overrides the worker thread count. Output does not depend on it.
const THREADS_ENV: &str = "FEATLENS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "featlens", version, about = "Feature-space analysis of imbalanced classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-class accuracy and imbalance ratio
    Accuracy(AnalysisArgs),
    /// Safe/border/rare/outlier archetypes and their medoids
    Archetypes(AnalysisArgs),
    /// Nearest-adversary profiles and divergence against validation false positives
    Adversaries(AnalysisArgs),
    /// Top-K feature overlap between classes
    Overlap(AnalysisArgs),
    /// Top-K feature density of each class relative to a reference class
    Density(AnalysisArgs),
    /// Saliency color histograms per class
    Colors(AnalysisArgs),
    /// Every stage that applies to the given bundles
    Report(AnalysisArgs),
    /// Write a synthetic train/val bundle pair
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DensityNormArg {
    CountRatio,
    ClassSize,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FdrAggArg {
    Mean,
    Max,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TpNormArg {
    WithinCategory,
    WithinClass,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScopeArg {
    FalsePositives,
    All,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RandomArg {
    Uniform,
    Dirichlet,
}

#[derive(Args, Debug)]
struct AnalysisArgs {
    /// Training bundle directory
    #[arg(long)]
    train_bundle: PathBuf,
    /// Validation bundle directory
    #[arg(long)]
    val_bundle: Option<PathBuf>,
    /// Neighbors per instance
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Reference class name for density
    #[arg(long)]
    ref_class: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Output formats, comma separated
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json")]
    format: Vec<Format>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// KLD smoothing
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "count-ratio")]
    density_norm: DensityNormArg,
    #[arg(long, value_enum, default_value = "mean")]
    fdr_agg: FdrAggArg,
    #[arg(long, value_enum, default_value = "within-category")]
    tp_norm: TpNormArg,
    /// Which training instances contribute neighbors to the adversary profile
    #[arg(long, value_enum, default_value = "false-positives")]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value = "uniform")]
    random: RandomArg,
    #[arg(long, default_value_t = DEFAULT_DIRICHLET_DRAWS)]
    dirichlet_draws: usize,
    /// N_c ranges for safe,border,rare,outlier, e.g. "4-5,2-3,1,0". Required when k != 5.
    #[arg(long)]
    thresholds: Option<String>,
    /// Reuse or store the neighbor graph in the output directory
    #[arg(long)]
    knn_cache: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in --spec; 0 for the built-in spec
    #[arg(long)]
    seed: Option<u64>,
    /// JSON spec; defaults to the built-in planted-overlap spec
    #[arg(long)]
    spec: Option<PathBuf>,
}

impl AnalysisArgs {
    fn config(&self) -> Result<RunConfig> {
        let k = self.k;
        let thresholds = match &self.thresholds {
            Some(t) => Some(Thresholds::parse(k as u32, t).context("parsing --thresholds")?),
            None => None,
        };
        let mut cfg = RunConfig::new(&self.train_bundle, &self.out);
        cfg.val_bundle = self.val_bundle.clone();
        cfg.k = k;
        cfg.top_k = self.top_k;
        cfg.ref_class = self.ref_class.clone();
        cfg.formats = self
            .format
            .iter()
            .map(|f| match f {
                Format::Json => OutputFormat::Json,
                Format::Csv => OutputFormat::Csv,
                Format::Svg => OutputFormat::Svg,
            })
            .collect();
        cfg.seed = self.seed;
        cfg.epsilon = self.epsilon;
        cfg.density_norm = match self.density_norm {
            DensityNormArg::CountRatio => DensityNorm::CountRatio,
            DensityNormArg::ClassSize => DensityNorm::ClassSize,
        };
        cfg.fdr_agg = match self.fdr_agg {
            FdrAggArg::Mean => FdrAggregation::Mean,
            FdrAggArg::Max => FdrAggregation::Max,
        };
        cfg.tp_norm = match self.tp_norm {
            TpNormArg::WithinCategory => TpNormalization::WithinCategory,
            TpNormArg::WithinClass => TpNormalization::WithinClass,
        };
        cfg.scope = match self.scope {
            ScopeArg::FalsePositives => NeighborScope::FalsePositives,
            ScopeArg::All => NeighborScope::AllInstances,
        };
        cfg.random = match self.random {
            RandomArg::Uniform => RandomBaseline::Uniform,
            RandomArg::Dirichlet => RandomBaseline::Dirichlet {
                draws: self.dirichlet_draws,
            },
        };
        cfg.thresholds = thresholds;
        cfg.knn_cache = self.knn_cache;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn print_summary(summary: &PipelineSummary) {
    for path in &summary.written {
        println!("{}", path.display());
    }
    for (stage, reason) in &summary.skipped {
        eprintln!("skipped {stage}: {reason}");
    }
}

fn analyze(args: &AnalysisArgs, stage: Option<Stage>) -> Result<()> {
    let cfg = args.config()?;
    let summary = match stage {
        Some(s) => run_stages(&cfg, &[s]).with_context(|| format!("{s} failed"))?,
        None => run_pipeline(&cfg).context("report failed")?,
    };
    print_summary(&summary);
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let mut spec: SyntheticSpec =
                read_json(path).with_context(|| format!("reading spec {}", path.display()))?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        None => SyntheticSpec::planted(args.seed.unwrap_or(0)),
    };
    write_synthetic(&spec, &args.out).with_context(|| format!("writing bundles to {}", args.out.display()))?;
    println!("{}", args.out.join("train").display());
    println!("{}", args.out.join("val").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Accuracy(a) => analyze(a, Some(Stage::Accuracy)),
        Command::Archetypes(a) => analyze(a, Some(Stage::Archetypes)),
        Command::Adversaries(a) => analyze(a, Some(Stage::Adversaries)),
        Command::Overlap(a) => analyze(a, Some(Stage::Overlap)),
        Command::Density(a) => analyze(a, Some(Stage::Density)),
        Command::Colors(a) => analyze(a, Some(Stage::Colors)),
        Command::Report(a) => analyze(a, None),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
