//! Report documents written by the pipeline.
//!
//! Each report resolves class ids to names once. JSON is the canonical form;
//! CSV rows and SVG charts are derived from the same structs, so a chart can
//! always be regenerated from its JSON file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adversary::{
    ClassProfile, DivergenceReport, DivergenceSummary, FdrAggregation, FdrMatrix, NeighborScope, RandomBaseline,
};
use crate::archetypes::{ArchetypeTpReport, Category, PrototypeSet, TpNormalization};
use crate::bundle::ClassStats;
use crate::chroma::{class_color_report, ColorHistogram};
use crate::error::{Error, Result};
use crate::features::{DensityNorm, DensityProfile, OverlapMatrix, TopKProfile};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn name(names: &[String], id: u32) -> String {
    names[id as usize].clone()
}

// ---------------------------------------------------------------- accuracy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub class: String,
    pub class_id: u32,
    pub instance_count: u64,
    pub correct_count: u64,
    pub accuracy: Option<f64>,
    pub imbalance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub split: String,
    pub overall_accuracy: f64,
    pub classes: Vec<AccuracyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub splits: Vec<SplitAccuracy>,
}

impl SplitAccuracy {
    pub fn new(split: &str, stats: &ClassStats, names: &[String]) -> Self {
        SplitAccuracy {
            split: split.to_string(),
            overall_accuracy: stats.overall_accuracy,
            classes: stats
                .classes
                .iter()
                .map(|c| AccuracyRow {
                    class: name(names, c.class_id),
                    class_id: c.class_id,
                    instance_count: c.instance_count,
                    correct_count: c.correct_count,
                    accuracy: c.accuracy,
                    imbalance_ratio: c.imbalance_ratio,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct AccuracyCsvRow<'a> {
    split: &'a str,
    class: &'a str,
    instance_count: u64,
    correct_count: u64,
    accuracy: Option<f64>,
    imbalance_ratio: Option<f64>,
}

impl AccuracyReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            self.splits.iter().flat_map(|s| {
                s.classes.iter().map(move |c| AccuracyCsvRow {
                    split: &s.split,
                    class: &c.class,
                    instance_count: c.instance_count,
                    correct_count: c.correct_count,
                    accuracy: c.accuracy,
                    imbalance_ratio: c.imbalance_ratio,
                })
            }),
        )
    }
}

// -------------------------------------------------------------- archetypes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeRow {
    pub class: String,
    pub category: Category,
    pub count: u64,
    pub tp_rate: Option<f64>,
    pub medoid_instance_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeReport {
    pub k: usize,
    pub normalization: TpNormalization,
    pub rows: Vec<ArchetypeRow>,
}

impl ArchetypeReport {
    pub fn new(k: usize, tp: &ArchetypeTpReport, prototypes: &PrototypeSet, names: &[String]) -> Self {
        ArchetypeReport {
            k,
            normalization: tp.normalization,
            rows: tp
                .rows
                .iter()
                .map(|r| ArchetypeRow {
                    class: name(names, r.class_id),
                    category: r.category,
                    count: r.count,
                    tp_rate: r.tp_rate,
                    medoid_instance_index: prototypes.get(r.class_id, r.category),
                })
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

// --------------------------------------------------------------- adversary

/// FDR value that serializes `+inf` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrValue(pub f64);

impl Serialize for FdrValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for FdrValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(FdrValue(v)),
            Raw::Text(t) if t == "inf" => Ok(FdrValue(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad FDR value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryRow {
    pub class: String,
    pub adversary_class: String,
    /// Training nearest-adversary share.
    pub proportion: Option<f64>,
    pub count: u64,
    /// Validation false-positive share.
    pub val_proportion: Option<f64>,
    pub val_count: u64,
    pub fdr: FdrValue,
    pub kld_nnb: Option<f64>,
    pub kld_fdr: Option<f64>,
    pub kld_random: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryReport {
    pub k: usize,
    pub scope: NeighborScope,
    pub epsilon: f64,
    pub random_baseline: RandomBaseline,
    pub fdr_aggregation: FdrAggregation,
    pub rows: Vec<AdversaryRow>,
    pub skipped: Vec<String>,
    pub summary: DivergenceSummary,
}

pub struct AdversaryInputs<'a> {
    pub k: usize,
    pub scope: NeighborScope,
    pub epsilon: f64,
    pub random_baseline: RandomBaseline,
    pub training: &'a ClassProfile,
    pub validation: &'a ClassProfile,
    pub fdr: &'a FdrMatrix,
    pub divergence: &'a DivergenceReport,
}

impl AdversaryReport {
    pub fn new(inputs: AdversaryInputs<'_>, names: &[String]) -> Self {
        let c = inputs.training.class_count as u32;
        let mut rows = Vec::new();
        for r in 0..c {
            let train = inputs.training.row(r);
            let val = inputs.validation.row(r);
            if train.is_none() && val.is_none() {
                continue;
            }
            let div = inputs.divergence.rows.iter().find(|d| d.class_id == r);
            for a in (0..c).filter(|&a| a != r) {
                rows.push(AdversaryRow {
                    class: name(names, r),
                    adversary_class: name(names, a),
                    proportion: train.map(|t| t.proportions[a as usize]),
                    count: train.map_or(0, |t| t.counts[a as usize]),
                    val_proportion: val.map(|v| v.proportions[a as usize]),
                    val_count: val.map_or(0, |v| v.counts[a as usize]),
                    fdr: FdrValue(inputs.fdr.get(r, a)),
                    kld_nnb: div.map(|d| d.kld_nnb),
                    kld_fdr: div.map(|d| d.kld_fdr),
                    kld_random: div.map(|d| d.kld_random),
                });
            }
        }
        AdversaryReport {
            k: inputs.k,
            scope: inputs.scope,
            epsilon: inputs.epsilon,
            random_baseline: inputs.random_baseline,
            fdr_aggregation: inputs.fdr.aggregation,
            rows,
            skipped: inputs.divergence.skipped.iter().map(|&s| name(names, s)).collect(),
            summary: inputs.divergence.summary.clone(),
        }
    }

    /// One row per (reference, adversary) pair plus a `summary` row holding
    /// the aggregate KLDs and the NNB:Random factor.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            class: &'a str,
            adversary_class: &'a str,
            proportion: Option<f64>,
            count: Option<u64>,
            val_proportion: Option<f64>,
            val_count: Option<u64>,
            fdr: Option<String>,
            kld_nnb: Option<f64>,
            kld_fdr: Option<f64>,
            kld_random: Option<f64>,
            nnb_random_factor: Option<f64>,
        }
        let s = &self.summary;
        let body = self.rows.iter().map(|r| Row {
            class: &r.class,
            adversary_class: &r.adversary_class,
            proportion: r.proportion,
            count: Some(r.count),
            val_proportion: r.val_proportion,
            val_count: Some(r.val_count),
            fdr: Some(if r.fdr.0.is_finite() { r.fdr.0.to_string() } else { "inf".into() }),
            kld_nnb: r.kld_nnb,
            kld_fdr: r.kld_fdr,
            kld_random: r.kld_random,
            nnb_random_factor: None,
        });
        let summary = Row {
            class: "summary",
            adversary_class: "",
            proportion: None,
            count: None,
            val_proportion: None,
            val_count: None,
            fdr: None,
            kld_nnb: Some(s.nnb_kld),
            kld_fdr: Some(s.fdr_kld),
            kld_random: Some(s.random_kld),
            nnb_random_factor: Some(s.nnb_random_factor),
        };
        write_csv(path, body.chain(std::iter::once(summary)))
    }
}

/// One summary line in the layout `NNB KLD | FDR KLD | Random KLD | NNB:Random factor`.
pub fn format_divergence_summary(label: &str, s: &DivergenceSummary) -> String {
    format!(
        "{label}\t{:.4}\t{:.4}\t{:.4}\t{:.3}",
        s.nnb_kld, s.fdr_kld, s.random_kld, s.nnb_random_factor
    )
}

// ----------------------------------------------------------------- overlap

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub fe_index: usize,
    pub mean_magnitude: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTopK {
    pub class: String,
    pub features: Vec<RankedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPairRow {
    pub class_a: String,
    pub class_b: String,
    pub count: usize,
    pub shared: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    pub embedding_dim: usize,
    pub classes: Vec<ClassTopK>,
    /// Pairs with `class_a` before `class_b` in manifest order.
    pub pairs: Vec<OverlapPairRow>,
}

impl OverlapReport {
    pub fn new(profile: &TopKProfile, overlap: &OverlapMatrix, names: &[String]) -> Self {
        let c = profile.classes.len() as u32;
        let mut pairs = Vec::new();
        for a in 0..c {
            for b in (a + 1)..c {
                pairs.push(OverlapPairRow {
                    class_a: name(names, a),
                    class_b: name(names, b),
                    count: overlap.count(a, b),
                    shared: overlap.shared(a, b).to_vec(),
                });
            }
        }
        OverlapReport {
            k: profile.k,
            embedding_dim: profile.embedding_dim,
            classes: profile
                .classes
                .iter()
                .enumerate()
                .map(|(c, feats)| ClassTopK {
                    class: name(names, c as u32),
                    features: feats
                        .iter()
                        .enumerate()
                        .map(|(rank, f)| RankedFeature {
                            rank,
                            fe_index: f.fe_index,
                            mean_magnitude: f.mean_magnitude,
                            share: f.share,
                        })
                        .collect(),
                })
                .collect(),
            pairs,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            class: &'a str,
            rank: usize,
            fe_index: usize,
            mean_magnitude: f64,
            share: f64,
        }
        write_csv(
            path,
            self.classes.iter().flat_map(|c| {
                c.features.iter().map(move |f| Row {
                    class: &c.class,
                    rank: f.rank,
                    fe_index: f.fe_index,
                    mean_magnitude: f.mean_magnitude,
                    share: f.share,
                })
            }),
        )
    }
}

// ----------------------------------------------------------------- density

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub adversary_class: String,
    pub fe_index: usize,
    pub count_adv: u64,
    pub count_ref: u64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub reference_class: String,
    pub k: usize,
    pub norm: DensityNorm,
    pub reference_size: u64,
    pub reference_top: Vec<usize>,
    pub rows: Vec<DensityRow>,
}

impl DensityReport {
    pub fn new(profile: &DensityProfile, names: &[String]) -> Self {
        DensityReport {
            reference_class: name(names, profile.reference_class),
            k: profile.k,
            norm: profile.norm,
            reference_size: profile.reference_size,
            reference_top: profile.reference_top.clone(),
            rows: profile
                .entries
                .iter()
                .map(|e| DensityRow {
                    adversary_class: name(names, e.adversary_class),
                    fe_index: e.fe_index,
                    count_adv: e.count_adv,
                    count_ref: e.count_ref,
                    ratio: e.ratio,
                })
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

// ------------------------------------------------------------------ colors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorRow {
    pub rank: usize,
    pub bin: String,
    pub count: u64,
    pub fraction: f64,
    pub mean_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassColors {
    pub class: String,
    pub total_pixels: u64,
    pub bins: Vec<ColorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorReport {
    pub classes: Vec<ClassColors>,
}

impl ColorReport {
    pub fn new(hist: &ColorHistogram, names: &[String]) -> Self {
        let rows = class_color_report(hist);
        let classes = hist
            .classes
            .iter()
            .enumerate()
            .map(|(c, bins)| ClassColors {
                class: name(names, c as u32),
                total_pixels: bins.iter().map(|b| b.count).sum(),
                bins: rows
                    .iter()
                    .filter(|r| r.class_id == c as u32)
                    .map(|r| ColorRow {
                        rank: r.rank,
                        bin: r.bin.clone(),
                        count: r.count,
                        fraction: r.fraction,
                        mean_hex: r.mean_hex.clone(),
                    })
                    .collect(),
            })
            .collect();
        ColorReport { classes }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            class: &'a str,
            rank: usize,
            bin: &'a str,
            count: u64,
            fraction: f64,
            mean_hex: &'a str,
        }
        write_csv(
            path,
            self.classes.iter().flat_map(|c| {
                c.bins.iter().map(move |b| Row {
                    class: &c.class,
                    rank: b.rank,
                    bin: &b.bin,
                    count: b.count,
                    fraction: b.fraction,
                    mean_hex: &b.mean_hex,
                })
            }),
        )
    }
}
