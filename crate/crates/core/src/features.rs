//! Latent-feature overlap between classes and feature density against a
//! reference class.
//!
//! "Top-K" always means the K largest values, ties broken by the lower
//! feature index. Class-level top-K ranks per-class means of the raw
//! embedding values; instance-level top-K ranks a single row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{EmbeddingTable, LabelVector};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 10;

/// Indices of the `k` largest entries of `values`, largest first; equal values
/// keep the lower index first.
pub fn top_k_indices<T: Copy + PartialOrd>(values: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub fe_index: usize,
    pub mean_magnitude: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKProfile {
    pub k: usize,
    pub embedding_dim: usize,
    /// One ranked list per class.
    pub classes: Vec<Vec<TopFeature>>,
}

impl TopKProfile {
    pub fn indices(&self, class_id: u32) -> Vec<usize> {
        self.classes[class_id as usize].iter().map(|f| f.fe_index).collect()
    }
}

fn check_k(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("top-K must be in 1..={dim}, got {k}")));
    }
    Ok(())
}

/// Per-class, per-dimension means, summed in row order.
pub fn class_means(embeddings: &EmbeddingTable, labels: &LabelVector, class_count: usize) -> Result<Vec<Vec<f64>>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    labels.check_range(class_count)?;
    let mut sums = vec![vec![0f64; embeddings.dim()]; class_count];
    let mut counts = vec![0u64; class_count];
    for (y, row) in labels.iter().zip(embeddings.iter_rows()) {
        counts[y as usize] += 1;
        for (s, v) in sums[y as usize].iter_mut().zip(row) {
            *s += *v as f64;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no instances")));
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= *n as f64);
    }
    Ok(sums)
}

pub fn topk_profile(embeddings: &EmbeddingTable, labels: &LabelVector, class_count: usize, k: usize) -> Result<TopKProfile> {
    check_k(k, embeddings.dim())?;
    let means = class_means(embeddings, labels, class_count)?;
    let classes = means
        .iter()
        .map(|m| {
            let top = top_k_indices(m, k);
            let total: f64 = top.iter().map(|&i| m[i]).sum();
            top.iter()
                .map(|&i| TopFeature {
                    fe_index: i,
                    mean_magnitude: m[i],
                    share: m[i] / total,
                })
                .collect()
        })
        .collect();
    Ok(TopKProfile {
        k,
        embedding_dim: embeddings.dim(),
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub class_count: usize,
    /// Row-major pairwise intersection sizes.
    pub counts: Vec<usize>,
    /// Row-major shared index sets, ascending.
    pub shared: Vec<Vec<usize>>,
}

impl OverlapMatrix {
    pub fn count(&self, i: u32, k: u32) -> usize {
        self.counts[i as usize * self.class_count + k as usize]
    }

    pub fn shared(&self, i: u32, k: u32) -> &[usize] {
        &self.shared[i as usize * self.class_count + k as usize]
    }
}

pub fn overlap_matrix(profile: &TopKProfile) -> OverlapMatrix {
    let c = profile.classes.len();
    let masks: Vec<Vec<bool>> = profile
        .classes
        .iter()
        .map(|feats| {
            let mut m = vec![false; profile.embedding_dim];
            feats.iter().for_each(|f| m[f.fe_index] = true);
            m
        })
        .collect();
    let mut counts = Vec::with_capacity(c * c);
    let mut shared = Vec::with_capacity(c * c);
    for a in &masks {
        for b in &masks {
            let s: Vec<usize> = (0..profile.embedding_dim).filter(|&d| a[d] && b[d]).collect();
            counts.push(s.len());
            shared.push(s);
        }
    }
    OverlapMatrix {
        class_count: c,
        counts,
        shared,
    }
}

/// Denominator for the density ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityNorm {
    /// Adversary count over the reference class count for the same feature.
    #[default]
    CountRatio,
    /// Adversary count over the number of reference class instances.
    ClassSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub adversary_class: u32,
    pub fe_index: usize,
    pub count_adv: u64,
    pub count_ref: u64,
    /// `None` when the denominator is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub reference_class: u32,
    pub k: usize,
    pub norm: DensityNorm,
    pub reference_size: u64,
    /// Class-level top-K of the reference class, in rank order.
    pub reference_top: Vec<usize>,
    /// Instances per class whose own top-K contains each reference feature:
    /// `[class][rank]`.
    pub counts: Vec<Vec<u64>>,
    /// One entry per (adversary class, reference feature), adversaries ascending.
    pub entries: Vec<DensityEntry>,
}

pub fn density_profile(
    embeddings: &EmbeddingTable,
    labels: &LabelVector,
    class_count: usize,
    reference_class: u32,
    k: usize,
    norm: DensityNorm,
) -> Result<DensityProfile> {
    check_k(k, embeddings.dim())?;
    if reference_class as usize >= class_count {
        return Err(Error::UnknownClass(reference_class.to_string()));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    labels.check_range(class_count)?;
    let reference_size = labels.iter().filter(|&y| y == reference_class).count() as u64;
    if reference_size == 0 {
        return Err(Error::invalid(format!("reference class {reference_class} has no instances")));
    }

    // Class-level top-K of the reference class only; other classes may be empty.
    let mut sums = vec![0f64; embeddings.dim()];
    for (y, row) in labels.iter().zip(embeddings.iter_rows()) {
        if y == reference_class {
            sums.iter_mut().zip(row).for_each(|(s, v)| *s += *v as f64);
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / reference_size as f64).collect();
    let reference_top = top_k_indices(&means, k);
    let mut rank_of = vec![usize::MAX; embeddings.dim()];
    for (rank, &f) in reference_top.iter().enumerate() {
        rank_of[f] = rank;
    }

    let instance_tops: Vec<Vec<usize>> = (0..embeddings.rows())
        .into_par_iter()
        .map(|i| top_k_indices(embeddings.row(i), k))
        .collect();
    let mut counts = vec![vec![0u64; k]; class_count];
    for (y, top) in labels.iter().zip(&instance_tops) {
        for &f in top {
            if rank_of[f] != usize::MAX {
                counts[y as usize][rank_of[f]] += 1;
            }
        }
    }

    let reference_counts = &counts[reference_class as usize];
    let mut entries = Vec::with_capacity((class_count - 1) * k);
    for a in (0..class_count as u32).filter(|&a| a != reference_class) {
        for (rank, &f) in reference_top.iter().enumerate() {
            let count_adv = counts[a as usize][rank];
            let count_ref = reference_counts[rank];
            let denom = match norm {
                DensityNorm::CountRatio => count_ref,
                DensityNorm::ClassSize => reference_size,
            };
            entries.push(DensityEntry {
                adversary_class: a,
                fe_index: f,
                count_adv,
                count_ref,
                ratio: (denom > 0).then(|| count_adv as f64 / denom as f64),
            });
        }
    }
    Ok(DensityProfile {
        reference_class,
        k,
        norm,
        reference_size,
        reference_top,
        counts,
        entries,
    })
}
