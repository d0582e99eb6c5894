//! Nearest-adversary profiles, validation false-positive profiles, Fisher's
//! discriminant ratio and the KLD comparison between them.
//!
//! Profiles are indexed by reference class and hold a distribution over all
//! classes in which the reference class itself always has zero mass. KLD
//! comparisons are taken over the adversary classes of each reference class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{EmbeddingTable, LabelVector, PredictionVector};
use crate::error::{Error, Result};
use crate::neighbors::NeighborGraph;

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_DIRICHLET_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub counts: Vec<u64>,
    pub proportions: Vec<f64>,
}

impl ProfileRow {
    fn from_counts(counts: Vec<u64>) -> Option<Self> {
        let total: u64 = counts.iter().sum();
        (total > 0).then(|| ProfileRow {
            proportions: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-reference-class distribution over other classes. Rows are `None`
/// when the reference class contributed nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_count: usize,
    pub rows: Vec<Option<ProfileRow>>,
}

/// Training-side nearest-adversary profile, keyed by the instance's true class.
pub type AdversaryProfile = ClassProfile;
/// Validation false positives, keyed by the predicted class.
pub type ValFpProfile = ClassProfile;

impl ClassProfile {
    pub fn row(&self, class_id: u32) -> Option<&ProfileRow> {
        self.rows[class_id as usize].as_ref()
    }
}

/// Which training instances contribute their neighbors to the adversary profile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScope {
    /// Only misclassified instances.
    #[default]
    FalsePositives,
    /// Every instance.
    AllInstances,
}

fn check_aligned(n: usize, labels: &LabelVector, predictions: &PredictionVector) -> Result<()> {
    for (what, len) in [("labels", labels.len()), ("predictions", predictions.len())] {
        if len != n {
            return Err(Error::LengthMismatch { what, expected: n, actual: len });
        }
    }
    Ok(())
}

pub fn adversary_profile(
    graph: &NeighborGraph,
    labels: &LabelVector,
    predictions: &PredictionVector,
    class_count: usize,
    scope: NeighborScope,
) -> Result<AdversaryProfile> {
    check_aligned(graph.len(), labels, predictions)?;
    labels.check_range(class_count)?;
    let y = labels.as_slice();
    let mut counts = vec![vec![0u64; class_count]; class_count];
    for i in 0..graph.len() {
        if scope == NeighborScope::FalsePositives && y[i] == predictions.get(i) {
            continue;
        }
        let reference = y[i] as usize;
        for &j in graph.neighbors(i) {
            let other = y[j as usize] as usize;
            if other != reference {
                counts[reference][other] += 1;
            }
        }
    }
    Ok(ClassProfile {
        class_count,
        rows: counts.into_iter().map(ProfileRow::from_counts).collect(),
    })
}

pub fn val_fp_profile(labels: &LabelVector, predictions: &PredictionVector, class_count: usize) -> Result<ValFpProfile> {
    check_aligned(labels.len(), labels, predictions)?;
    labels.check_range(class_count)?;
    predictions.check_range(class_count)?;
    let mut counts = vec![vec![0u64; class_count]; class_count];
    for (truth, pred) in labels.iter().zip(predictions.iter()) {
        if truth != pred {
            counts[pred as usize][truth as usize] += 1;
        }
    }
    Ok(ClassProfile {
        class_count,
        rows: counts.into_iter().map(ProfileRow::from_counts).collect(),
    })
}

/// Reduction of the per-dimension ratios to one value per class pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrAggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrMatrix {
    pub class_count: usize,
    pub aggregation: FdrAggregation,
    /// Row-major `class_count x class_count`; `+inf` where some dimension has
    /// zero variance in both classes but different means.
    pub values: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Unbiased (n - 1) per-dimension variances.
    pub variances: Vec<Vec<f64>>,
}

impl FdrMatrix {
    pub fn get(&self, i: u32, k: u32) -> f64 {
        self.values[i as usize * self.class_count + k as usize]
    }
}

fn fdr_dimension(mu_i: f64, mu_k: f64, var_i: f64, var_k: f64) -> f64 {
    let num = (mu_i - mu_k) * (mu_i - mu_k);
    let den = var_i + var_k;
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Fisher's discriminant ratio `(mu_i - mu_k)^2 / (var_i + var_k)` per
/// dimension, reduced across dimensions by `aggregation`.
pub fn fdr_matrix(
    embeddings: &EmbeddingTable,
    labels: &LabelVector,
    class_count: usize,
    aggregation: FdrAggregation,
) -> Result<FdrMatrix> {
    if labels.len() != embeddings.rows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    labels.check_range(class_count)?;
    let dim = embeddings.dim();
    let mut n = vec![0u64; class_count];
    let mut means = vec![vec![0f64; dim]; class_count];
    for (y, row) in labels.iter().zip(embeddings.iter_rows()) {
        n[y as usize] += 1;
        for (m, v) in means[y as usize].iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    if let Some(c) = n.iter().position(|&count| count < 2) {
        return Err(Error::invalid(format!(
            "class {c} has {} instance(s); FDR needs at least 2 per class",
            n[c]
        )));
    }
    for (m, &count) in means.iter_mut().zip(&n) {
        m.iter_mut().for_each(|v| *v /= count as f64);
    }
    let mut variances = vec![vec![0f64; dim]; class_count];
    for (y, row) in labels.iter().zip(embeddings.iter_rows()) {
        let c = y as usize;
        for ((s, v), m) in variances[c].iter_mut().zip(row).zip(&means[c]) {
            let d = *v as f64 - m;
            *s += d * d;
        }
    }
    for (v, &count) in variances.iter_mut().zip(&n) {
        v.iter_mut().for_each(|s| *s /= (count - 1) as f64);
    }
    let mut values = vec![0f64; class_count * class_count];
    for i in 0..class_count {
        for k in (i + 1)..class_count {
            let per_dim = (0..dim).map(|d| fdr_dimension(means[i][d], means[k][d], variances[i][d], variances[k][d]));
            let value = match aggregation {
                FdrAggregation::Mean => per_dim.sum::<f64>() / dim as f64,
                FdrAggregation::Max => per_dim.fold(0.0, f64::max),
            };
            values[i * class_count + k] = value;
            values[k * class_count + i] = value;
        }
    }
    Ok(FdrMatrix {
        class_count,
        aggregation,
        values,
        means,
        variances,
    })
}

/// KL divergence `sum p' ln(p'/q')` in nats, where `p'` and `q'` are
/// `(value + epsilon)` renormalized.
pub fn kld(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "KLD support mismatch: {} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("KLD epsilon must be positive and finite"));
    }
    if p.iter().chain(q).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("KLD inputs must be finite and non-negative"));
    }
    let zp: f64 = p.iter().map(|v| v + epsilon).sum();
    let zq: f64 = q.iter().map(|v| v + epsilon).sum();
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(q) {
        let ps = (a + epsilon) / zp;
        let qs = (b + epsilon) / zq;
        acc += ps * (ps / qs).ln();
    }
    Ok(acc.max(0.0))
}

/// Restricts a full-class distribution to the adversary classes of `reference`.
fn adversary_support(values: &[f64], reference: usize) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != reference)
        .map(|(_, v)| *v)
        .collect()
}

/// Distribution over adversaries of `reference` with mass proportional to
/// `1 / (FDR + epsilon)`. Infinite FDR receives zero mass.
pub fn fdr_distribution(fdr: &FdrMatrix, reference: u32, epsilon: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..fdr.class_count as u32)
        .filter(|&a| a != reference)
        .map(|a| 1.0 / (fdr.get(reference, a) + epsilon))
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RandomBaseline {
    /// Uniform over the adversary classes.
    #[default]
    Uniform,
    /// Mean KLD over `draws` seeded Dirichlet(1) distributions.
    Dirichlet { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub random: RandomBaseline,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        DivergenceOptions {
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            random: RandomBaseline::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub class_id: u32,
    pub val_fp_count: u64,
    pub kld_nnb: f64,
    pub kld_fdr: f64,
    pub kld_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub nnb_kld: f64,
    pub fdr_kld: f64,
    pub random_kld: f64,
    /// `+inf` when the nearest-adversary divergence is exactly zero, NaN if
    /// both divergences are.
    #[serde(with = "inf_as_text")]
    pub nnb_random_factor: f64,
}

/// JSON has no infinity or NaN; write them as `"inf"` and `"nan"`.
mod inf_as_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("bad value {t:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
    /// Classes with validation false positives but no training profile row.
    pub skipped: Vec<u32>,
    pub summary: DivergenceSummary,
}

/// How many times better than the random baseline the nearest-adversary
/// prediction is: `random_kld / nnb_kld`.
pub fn nnb_random_factor(random_kld: f64, nnb_kld: f64) -> f64 {
    random_kld / nnb_kld
}

fn dirichlet_mean_kld(p: &[f64], epsilon: f64, draws: usize, seed: u64, stream: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut q = vec![0f64; p.len()];
    let mut acc = 0.0;
    for _ in 0..draws {
        for v in q.iter_mut() {
            *v = rng.sample::<f64, _>(Exp1);
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        acc += kld(p, &q, epsilon)?;
    }
    Ok(acc / draws as f64)
}

pub fn divergence_report(
    adversary: &AdversaryProfile,
    fdr: &FdrMatrix,
    validation: &ValFpProfile,
    options: &DivergenceOptions,
) -> Result<DivergenceReport> {
    let c = adversary.class_count;
    if validation.class_count != c || fdr.class_count != c {
        return Err(Error::invalid(format!(
            "profiles cover different class sets ({c}, {}, {})",
            validation.class_count, fdr.class_count
        )));
    }
    if c < 2 {
        return Err(Error::invalid("divergence needs at least two classes"));
    }
    if let RandomBaseline::Dirichlet { draws: 0 } = options.random {
        return Err(Error::invalid("Dirichlet baseline needs at least one draw"));
    }
    let mut skipped = Vec::new();
    let mut eligible = Vec::new();
    for r in 0..c {
        match (&validation.rows[r], &adversary.rows[r]) {
            (Some(val), Some(adv)) => eligible.push((r, val, adv)),
            (Some(_), None) => skipped.push(r as u32),
            _ => {}
        }
    }
    if eligible.is_empty() {
        return Err(Error::invalid(
            "no reference class has both validation false positives and a training adversary profile",
        ));
    }
    let rows = eligible
        .par_iter()
        .map(|&(r, val, adv)| {
            let p = adversary_support(&val.proportions, r);
            let nnb = adversary_support(&adv.proportions, r);
            let kld_nnb = kld(&p, &nnb, options.epsilon)?;
            let kld_fdr = kld(&p, &fdr_distribution(fdr, r as u32, options.epsilon), options.epsilon)?;
            let kld_random = match options.random {
                RandomBaseline::Uniform => kld(&p, &vec![1.0 / p.len() as f64; p.len()], options.epsilon)?,
                RandomBaseline::Dirichlet { draws } => {
                    dirichlet_mean_kld(&p, options.epsilon, draws, options.seed, r as u64)?
                }
            };
            Ok(DivergenceRow {
                class_id: r as u32,
                val_fp_count: val.total(),
                kld_nnb,
                kld_fdr,
                kld_random,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&DivergenceRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let nnb_kld = mean(|r| r.kld_nnb);
    let random_kld = mean(|r| r.kld_random);
    let summary = DivergenceSummary {
        nnb_kld,
        fdr_kld: mean(|r| r.kld_fdr),
        random_kld,
        nnb_random_factor: nnb_random_factor(random_kld, nnb_kld),
    };
    Ok(DivergenceReport { rows, skipped, summary })
}
