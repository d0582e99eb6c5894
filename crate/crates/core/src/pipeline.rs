//! Runs the analysis stages in order, broad to narrow: class accuracy,
//! archetypes, nearest adversaries with KLD validation, top-K overlap,
//! feature density and salient colors.
//!
//! Every stage is a pure function of the bundles and the config and writes
//! fixed file names under the output directory.

use std::cell::OnceCell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{
    adversary_profile, divergence_report, fdr_matrix, val_fp_profile, DivergenceOptions, FdrAggregation,
    NeighborScope, RandomBaseline, DEFAULT_EPSILON,
};
use crate::archetypes::{archetype_tp_report, assign_archetypes, select_prototypes, Thresholds, TpNormalization};
use crate::bundle::{class_stats, load_bundle, DatasetBundle};
use crate::chroma::accumulate_file;
use crate::error::{Error, Result};
use crate::features::{density_profile, overlap_matrix, topk_profile, DensityNorm, DEFAULT_TOP_K};
use crate::neighbors::{build_neighbor_graph, cached_neighbor_graph, same_class_neighbor_count, NeighborGraph};
use crate::report::{
    write_json, AccuracyReport, AdversaryInputs, AdversaryReport, ArchetypeReport, ColorReport, DensityReport,
    OverlapReport, SplitAccuracy,
};
use crate::svg;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Accuracy,
    Archetypes,
    Adversaries,
    Overlap,
    Density,
    Colors,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Accuracy,
        Stage::Archetypes,
        Stage::Adversaries,
        Stage::Overlap,
        Stage::Density,
        Stage::Colors,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Accuracy => "accuracy",
            Stage::Archetypes => "archetypes",
            Stage::Adversaries => "adversaries",
            Stage::Overlap => "overlap",
            Stage::Density => "density",
            Stage::Colors => "colors",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_bundle: PathBuf,
    pub val_bundle: Option<PathBuf>,
    pub k: usize,
    pub top_k: usize,
    pub ref_class: Option<String>,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub seed: u64,
    pub epsilon: f64,
    pub density_norm: DensityNorm,
    pub fdr_agg: FdrAggregation,
    pub tp_norm: TpNormalization,
    pub scope: NeighborScope,
    pub random: RandomBaseline,
    /// Required when `k != 5`.
    pub thresholds: Option<Thresholds>,
    /// Reuse or store `knn_k{K}.bin` in the output directory.
    pub knn_cache: bool,
}

impl RunConfig {
    pub fn new(train_bundle: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            train_bundle: train_bundle.into(),
            val_bundle: None,
            k: DEFAULT_K,
            top_k: DEFAULT_TOP_K,
            ref_class: None,
            out: out.into(),
            formats: vec![OutputFormat::Json],
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            density_norm: DensityNorm::default(),
            fdr_agg: FdrAggregation::default(),
            tp_norm: TpNormalization::default(),
            scope: NeighborScope::default(),
            random: RandomBaseline::default(),
            thresholds: None,
            knn_cache: false,
        }
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineSummary {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<(Stage, String)>,
}

struct Context<'a> {
    config: &'a RunConfig,
    train: DatasetBundle,
    val: Option<DatasetBundle>,
    graph: OnceCell<NeighborGraph>,
}

impl Context<'_> {
    fn graph(&self) -> Result<&NeighborGraph> {
        if let Some(g) = self.graph.get() {
            return Ok(g);
        }
        let emb = &self.train.embeddings;
        let g = if self.config.knn_cache {
            cached_neighbor_graph(&self.config.out, emb, self.config.k)?
        } else {
            build_neighbor_graph(emb, self.config.k)?
        };
        Ok(self.graph.get_or_init(|| g))
    }

    fn names(&self) -> &[String] {
        self.train.class_names()
    }
}

/// Why `stage` cannot run with this input, if anything.
fn precondition(stage: Stage, ctx: &Context<'_>) -> Result<()> {
    match stage {
        Stage::Adversaries if ctx.val.is_none() => Err(Error::ValidationBundleRequired),
        Stage::Density if ctx.config.ref_class.is_none() => {
            Err(Error::invalid("density stage requires a reference class"))
        }
        Stage::Colors if ctx.train.saliency.is_none() => {
            Err(Error::invalid("colors stage requires a saliency stream in the training bundle"))
        }
        _ => Ok(()),
    }
}

fn emit<T: serde::Serialize>(
    ctx: &Context<'_>,
    stem: &str,
    report: &T,
    csv: impl FnOnce(&Path) -> Result<()>,
    chart: impl FnOnce() -> String,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let out = &ctx.config.out;
    if ctx.config.wants(OutputFormat::Json) {
        let p = out.join(format!("{stem}.json"));
        write_json(&p, report)?;
        written.push(p);
    }
    if ctx.config.wants(OutputFormat::Csv) {
        let p = out.join(format!("{stem}.csv"));
        csv(&p)?;
        written.push(p);
    }
    if ctx.config.wants(OutputFormat::Svg) {
        let p = out.join(format!("{stem}.svg"));
        svg::write_svg(&p, &chart())?;
        written.push(p);
    }
    Ok(())
}

fn run_stage(stage: Stage, ctx: &Context<'_>, written: &mut Vec<PathBuf>) -> Result<()> {
    let cfg = ctx.config;
    let train = &ctx.train;
    let names = ctx.names();
    let class_count = train.class_count();
    match stage {
        Stage::Accuracy => {
            let mut splits = vec![SplitAccuracy::new(&train.manifest.split_name, &class_stats(train), names)];
            if let Some(val) = &ctx.val {
                splits.push(SplitAccuracy::new(&val.manifest.split_name, &class_stats(val), names));
            }
            let report = AccuracyReport { splits };
            emit(ctx, "accuracy", &report, |p| report.write_csv(p), || svg::accuracy_chart(&report), written)
        }
        Stage::Archetypes => {
            let graph = ctx.graph()?;
            let n_same = same_class_neighbor_count(graph, &train.labels)?;
            let assignment = assign_archetypes(&n_same, cfg.k as u32, cfg.thresholds.as_ref())?;
            let tp = archetype_tp_report(&assignment, &train.labels, &train.predictions, class_count, cfg.tp_norm)?;
            let protos = select_prototypes(&train.embeddings, &train.labels, &assignment, class_count)?;
            let report = ArchetypeReport::new(cfg.k, &tp, &protos, names);
            emit(ctx, "archetypes", &report, |p| report.write_csv(p), || svg::archetype_chart(&report), written)
        }
        Stage::Adversaries => {
            let val = ctx.val.as_ref().ok_or(Error::ValidationBundleRequired)?;
            let graph = ctx.graph()?;
            let training = adversary_profile(graph, &train.labels, &train.predictions, class_count, cfg.scope)?;
            let validation = val_fp_profile(&val.labels, &val.predictions, class_count)?;
            let fdr = fdr_matrix(&train.embeddings, &train.labels, class_count, cfg.fdr_agg)?;
            let options = DivergenceOptions {
                epsilon: cfg.epsilon,
                seed: cfg.seed,
                random: cfg.random,
            };
            let divergence = divergence_report(&training, &fdr, &validation, &options)?;
            let report = AdversaryReport::new(
                AdversaryInputs {
                    k: cfg.k,
                    scope: cfg.scope,
                    epsilon: cfg.epsilon,
                    random_baseline: cfg.random,
                    training: &training,
                    validation: &validation,
                    fdr: &fdr,
                    divergence: &divergence,
                },
                names,
            );
            emit(ctx, "adversary", &report, |p| report.write_csv(p), || svg::adversary_chart(&report), written)
        }
        Stage::Overlap => {
            let profile = topk_profile(&train.embeddings, &train.labels, class_count, cfg.top_k)?;
            let report = OverlapReport::new(&profile, &overlap_matrix(&profile), names);
            emit(ctx, "overlap", &report, |p| report.write_csv(p), || svg::overlap_chart(&report), written)
        }
        Stage::Density => {
            let ref_name = cfg
                .ref_class
                .as_deref()
                .ok_or_else(|| Error::invalid("density stage requires a reference class"))?;
            let ref_id = train.manifest.class_id(ref_name)?;
            let profile = density_profile(
                &train.embeddings,
                &train.labels,
                class_count,
                ref_id,
                cfg.top_k,
                cfg.density_norm,
            )?;
            let report = DensityReport::new(&profile, names);
            let stem = format!("density_{ref_name}");
            emit(ctx, &stem, &report, |p| report.write_csv(p), || svg::density_chart(&report), written)
        }
        Stage::Colors => {
            let handle = train
                .saliency
                .as_ref()
                .ok_or_else(|| Error::invalid("colors stage requires a saliency stream in the training bundle"))?;
            let hist = accumulate_file(&handle.path, &train.labels, class_count)?;
            let report = ColorReport::new(&hist, names);
            emit(ctx, "colors", &report, |p| report.write_csv(p), || svg::color_chart(&report), written)
        }
    }
}

fn load_context(config: &RunConfig) -> Result<Context<'_>> {
    let train = load_bundle(&config.train_bundle)?;
    let val = config.val_bundle.as_ref().map(load_bundle).transpose()?;
    if let Some(v) = &val {
        if v.class_names() != train.class_names() || v.embeddings.dim() != train.embeddings.dim() {
            return Err(Error::invalid(
                "validation bundle must share class names and embedding dim with the training bundle",
            ));
        }
    }
    if let Some(name) = &config.ref_class {
        train.manifest.class_id(name)?;
    }
    if config.formats.is_empty() {
        return Err(Error::invalid("no output format selected"));
    }
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    Ok(Context {
        config,
        train,
        val,
        graph: OnceCell::new(),
    })
}

/// Runs the given stages. A stage whose precondition fails is an error.
pub fn run_stages(config: &RunConfig, stages: &[Stage]) -> Result<PipelineSummary> {
    let ctx = load_context(config)?;
    let mut summary = PipelineSummary::default();
    for &stage in stages {
        precondition(stage, &ctx)?;
        run_stage(stage, &ctx, &mut summary.written)?;
    }
    Ok(summary)
}

/// Runs every applicable stage, recording the ones skipped and why.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary> {
    let ctx = load_context(config)?;
    let mut summary = PipelineSummary::default();
    for stage in Stage::ALL {
        if let Err(e) = precondition(stage, &ctx) {
            summary.skipped.push((stage, e.to_string()));
            continue;
        }
        run_stage(stage, &ctx, &mut summary.written)?;
    }
    Ok(summary)
}
