//! Exact Euclidean K-nearest-neighbor graph over an embedding table.
//!
//! Squared distances are accumulated in f64 as a left-to-right sum over
//! dimensions and compared directly; only the reported distances take a
//! square root. Ties go to the lower instance index, and the instance itself
//! is never its own neighbor.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bundle::{EmbeddingTable, LabelVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    indices: Vec<u32>,
    distances: Vec<f32>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f32] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// K nearest rows to `query` among all rows except `query` itself.
fn query_row(emb: &EmbeddingTable, query: usize, k: usize, out_idx: &mut [u32], out_dist: &mut [f32]) {
    // Sorted ascending by (d2, index); scanning j in increasing order and
    // inserting after equal distances keeps the lower index first on ties.
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    let q = emb.row(query);
    for (j, row) in emb.iter_rows().enumerate() {
        if j == query {
            continue;
        }
        let d2 = squared_distance(q, row);
        if best.len() == k && d2 >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(d, _)| d <= d2);
        best.insert(pos, (d2, j as u32));
        best.truncate(k);
    }
    for (slot, (d2, j)) in best.into_iter().enumerate() {
        out_idx[slot] = j;
        out_dist[slot] = d2.sqrt() as f32;
    }
}

/// Builds the exact K-nearest-neighbor graph. Rows are processed in parallel;
/// the output does not depend on the thread count.
pub fn build_neighbor_graph(embeddings: &EmbeddingTable, k: usize) -> Result<NeighborGraph> {
    let n = embeddings.rows();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k ({k}) must be smaller than the number of instances ({n})")));
    }
    let mut indices = vec![0u32; n * k];
    let mut distances = vec![0f32; n * k];
    indices
        .par_chunks_mut(k)
        .zip(distances.par_chunks_mut(k))
        .enumerate()
        .for_each(|(i, (idx, dist))| query_row(embeddings, i, k, idx, dist));
    Ok(NeighborGraph { k, indices, distances })
}

/// N_c per instance: how many of its K neighbors share its label.
pub fn same_class_neighbor_count(graph: &NeighborGraph, labels: &LabelVector) -> Result<Vec<u32>> {
    if graph.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: graph.len(),
            actual: labels.len(),
        });
    }
    let labels = labels.as_slice();
    Ok((0..graph.len())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .filter(|&&j| labels[j as usize] == labels[i])
                .count() as u32
        })
        .collect())
}

const CACHE_MAGIC: &[u8; 8] = b"FLKNN\0\0\x01";
const CACHE_HEADER_LEN: usize = 8 + 3 * 8 + 32;

pub fn cache_file_name(k: usize) -> String {
    format!("knn_k{k}.bin")
}

fn embeddings_digest(emb: &EmbeddingTable) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in emb.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn cache_header(emb: &EmbeddingTable, k: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(CACHE_HEADER_LEN);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(emb.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&(emb.dim() as u64).to_le_bytes());
    out.extend_from_slice(&embeddings_digest(emb));
    out
}

/// Writes `graph` to `dir/knn_k{K}.bin`: header (magic, n, k, dim as u64 LE,
/// SHA-256 of the embedding bytes), then n*k u32 indices, then n*k f32 distances.
pub fn write_cache(dir: &Path, graph: &NeighborGraph, embeddings: &EmbeddingTable) -> Result<PathBuf> {
    let path = dir.join(cache_file_name(graph.k));
    let mut bytes = cache_header(embeddings, graph.k);
    bytes.extend(graph.indices.iter().flat_map(|v| v.to_le_bytes()));
    bytes.extend(graph.distances.iter().flat_map(|v| v.to_le_bytes()));
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Returns the cached graph if the cache file exists and its header matches
/// these embeddings and `k`; any mismatch or damage yields `None`.
pub fn read_cache(dir: &Path, embeddings: &EmbeddingTable, k: usize) -> Option<NeighborGraph> {
    let bytes = fs::read(dir.join(cache_file_name(k))).ok()?;
    let header = cache_header(embeddings, k);
    let n = embeddings.rows();
    if bytes.len() != header.len() + n * k * 8 || bytes[..header.len()] != header[..] {
        return None;
    }
    let body = &bytes[header.len()..];
    let (idx_bytes, dist_bytes) = body.split_at(n * k * 4);
    let indices: Vec<u32> = idx_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if indices.iter().any(|&j| j as usize >= n) {
        return None;
    }
    let distances = dist_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some(NeighborGraph { k, indices, distances })
}

/// Loads the graph from the cache in `dir` or builds and stores it.
pub fn cached_neighbor_graph(dir: &Path, embeddings: &EmbeddingTable, k: usize) -> Result<NeighborGraph> {
    if let Some(g) = read_cache(dir, embeddings, k) {
        return Ok(g);
    }
    let g = build_neighbor_graph(embeddings, k)?;
    write_cache(dir, &g, embeddings)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<f32>]) -> EmbeddingTable {
        EmbeddingTable::from_rows(rows).unwrap()
    }

    #[test]
    fn nearest_on_a_line() {
        let g = build_neighbor_graph(&table(&[vec![0.0], vec![1.0], vec![10.0]]), 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.distances(2), &[9.0]);
    }

    #[test]
    fn unit_square_ties_go_to_lower_index() {
        // (0,0) (1,1) (0,1) (1,0)
        let e = table(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let g = build_neighbor_graph(&e, 2).unwrap();
        assert_eq!(g.neighbors(0), &[2, 3]);
        assert_eq!(g.distances(0), &[1.0, 1.0]);
        let g3 = build_neighbor_graph(&e, 3).unwrap();
        assert_eq!(g3.neighbors(0), &[2, 3, 1]);
    }

    #[test]
    fn duplicates_resolve_by_index() {
        let e = table(&[vec![5.0], vec![5.0], vec![5.0], vec![5.0]]);
        let g = build_neighbor_graph(&e, 2).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(2), &[0, 1]);
        assert_eq!(g.neighbors(3), &[0, 1]);
    }

    #[test]
    fn k_bounds() {
        let e = table(&[vec![0.0], vec![1.0]]);
        assert!(build_neighbor_graph(&e, 0).is_err());
        assert!(build_neighbor_graph(&e, 2).is_err());
        assert!(build_neighbor_graph(&e, 1).is_ok());
    }

    #[test]
    fn same_class_counts() {
        let e = table(&[vec![0.0], vec![0.1], vec![0.2], vec![5.0], vec![5.1], vec![5.2]]);
        let g = build_neighbor_graph(&e, 2).unwrap();
        let all_same = same_class_neighbor_count(&g, &vec![0, 0, 0, 1, 1, 1].into()).unwrap();
        assert_eq!(all_same, vec![2; 6]);
        let none_same = same_class_neighbor_count(&g, &vec![0, 1, 2, 0, 1, 2].into()).unwrap();
        assert_eq!(none_same, vec![0; 6]);
        assert!(same_class_neighbor_count(&g, &vec![0].into()).is_err());
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let e = table(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![3.0, 0.0], vec![2.0, 2.0]]);
        assert!(read_cache(dir.path(), &e, 2).is_none());
        let g = cached_neighbor_graph(dir.path(), &e, 2).unwrap();
        assert_eq!(read_cache(dir.path(), &e, 2), Some(g));
        assert!(dir.path().join("knn_k2.bin").is_file());
        let moved = e.scaled(2.0).unwrap();
        assert!(read_cache(dir.path(), &moved, 2).is_none());
        assert!(read_cache(dir.path(), &e, 1).is_none());
    }
}
