//! Brute-force reference implementations. These deliberately avoid the
//! library's code paths: full sorts instead of bounded buffers, set
//! operations instead of masks, materialized pixel lists instead of running
//! means.

#![allow(dead_code)]

use std::collections::BTreeSet;

use featlens::bundle::{ClassIds, EmbeddingTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded_table(seed: u64, rows: usize, dim: usize) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * dim).map(|_| rng.random::<f32>()).collect();
    EmbeddingTable::new(rows, dim, values).unwrap()
}

pub fn seeded_labels(seed: u64, n: usize, classes: u32) -> ClassIds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every class is guaranteed at least one instance
    let mut v: Vec<u32> = (0..n).map(|i| if (i as u32) < classes { i as u32 } else { rng.random_range(0..classes) }).collect();
    v.rotate_left(n / 3);
    ClassIds::new(v)
}

/// Per-row left-to-right f64 sum of squared differences.
pub fn oracle_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for d in 0..a.len() {
        let diff = f64::from(a[d]) - f64::from(b[d]);
        s += diff * diff;
    }
    s
}

/// O(n^2 log n) KNN: full candidate list sorted by (distance, index).
pub fn oracle_knn(emb: &EmbeddingTable, k: usize) -> Vec<(Vec<u32>, Vec<f32>)> {
    (0..emb.rows())
        .map(|i| {
            let mut all: Vec<(f64, u32)> = (0..emb.rows())
                .filter(|&j| j != i)
                .map(|j| (oracle_sq_dist(emb.row(i), emb.row(j)), j as u32))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.truncate(k);
            (
                all.iter().map(|p| p.1).collect(),
                all.iter().map(|p| p.0.sqrt() as f32).collect(),
            )
        })
        .collect()
}

pub fn oracle_same_class(knn: &[(Vec<u32>, Vec<f32>)], labels: &[u32]) -> Vec<u32> {
    knn.iter()
        .enumerate()
        .map(|(i, (nb, _))| nb.iter().filter(|&&j| labels[j as usize] == labels[i]).count() as u32)
        .collect()
}

pub fn oracle_medoid(emb: &EmbeddingTable, members: &[u32]) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    let mut sorted = members.to_vec();
    sorted.sort();
    for &s in &sorted {
        let total: f64 = members
            .iter()
            .map(|&t| oracle_sq_dist(emb.row(s as usize), emb.row(t as usize)).sqrt())
            .sum();
        if best.is_none_or(|(b, _)| total < b) {
            best = Some((total, s));
        }
    }
    best.map(|b| b.1)
}

/// Class means via per-class filtering.
pub fn oracle_class_mean(emb: &EmbeddingTable, labels: &[u32], class: u32) -> Vec<f64> {
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    (0..emb.dim())
        .map(|d| {
            let mut s = 0.0;
            for &i in &members {
                s += f64::from(emb.row(i)[d]);
            }
            s / members.len() as f64
        })
        .collect()
}

/// Top-k by stable sort on descending value; the stable sort keeps lower
/// indices first among equals.
pub fn oracle_topk(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    order.truncate(k);
    order
}

pub fn oracle_overlap(a: &[usize], b: &[usize]) -> Vec<usize> {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    a.intersection(&b).copied().collect()
}

/// (count_adv per adversary class, count_ref) for feature `f`.
pub fn oracle_density_counts(emb: &EmbeddingTable, labels: &[u32], k: usize, f: usize, class_count: u32) -> Vec<u64> {
    let mut counts = vec![0u64; class_count as usize];
    for i in 0..emb.rows() {
        let row: Vec<f64> = emb.row(i).iter().map(|&v| f64::from(v)).collect();
        if oracle_topk(&row, k).contains(&f) {
            counts[labels[i] as usize] += 1;
        }
    }
    counts
}

pub fn oracle_nearest_anchor(rgb: [u8; 3], anchors: &[[u8; 3]]) -> usize {
    let dists: Vec<f64> = anchors
        .iter()
        .map(|a| (0..3).map(|c| (f64::from(rgb[c]) - f64::from(a[c])).powi(2)).sum())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).unwrap()
}

/// Direct evaluation of sum p ln(p/q) after (x + eps) renormalization.
pub fn oracle_kld(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let sp: f64 = p.iter().sum::<f64>() + eps * p.len() as f64;
    let sq: f64 = q.iter().sum::<f64>() + eps * q.len() as f64;
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let a = (a + eps) / sp;
            let b = (b + eps) / sq;
            a * a.ln() - a * b.ln()
        })
        .sum()
}

/// `[truth][prediction]` counts.
pub fn oracle_confusion(labels: &[u32], preds: &[u32], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for i in 0..labels.len() {
        m[labels[i] as usize][preds[i] as usize] += 1;
    }
    m
}
