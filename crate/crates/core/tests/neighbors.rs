mod common;

use common::*;
use featlens::bundle::{ClassIds, EmbeddingTable};
use featlens::neighbors::{build_neighbor_graph, same_class_neighbor_count, NeighborGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_matches_oracle(emb: &EmbeddingTable, g: &NeighborGraph) {
    let oracle = oracle_knn(emb, g.k());
    for (i, (idx, dist)) in oracle.iter().enumerate() {
        assert_eq!(g.neighbors(i), &idx[..], "row {i} indices");
        let got: Vec<u32> = g.distances(i).iter().map(|d| d.to_bits()).collect();
        let want: Vec<u32> = dist.iter().map(|d| d.to_bits()).collect();
        assert_eq!(got, want, "row {i} distances");
    }
}

#[test]
fn uniform_200x8_matches_brute_force() {
    let emb = seeded_table(42, 200, 8);
    for k in [1, 5, 17] {
        assert_matches_oracle(&emb, &build_neighbor_graph(&emb, k).unwrap());
    }
}

#[test]
fn quantized_grid_with_many_ties_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values = (0..150 * 3).map(|_| rng.random_range(0..3) as f32).collect();
    let emb = EmbeddingTable::new(150, 3, values).unwrap();
    assert_matches_oracle(&emb, &build_neighbor_graph(&emb, 5).unwrap());
}

#[test]
fn graph_invariants() {
    let emb = seeded_table(7, 120, 4);
    let g = build_neighbor_graph(&emb, 6).unwrap();
    for i in 0..g.len() {
        let nb = g.neighbors(i);
        assert!(!nb.contains(&(i as u32)));
        assert!(nb.iter().all(|&j| (j as usize) < g.len()));
        let mut uniq = nb.to_vec();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), nb.len());
        assert!(g.distances(i).windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let emb = seeded_table(9, 300, 16);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_neighbor_graph(&emb, 5).unwrap())
    };
    let serial = run(1);
    assert_eq!(serial, run(4));
    assert_eq!(serial, run(7));
}

#[test]
fn planted_pure_and_mixed_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let (center, label) = if i < 100 { (0.0, 0) } else { (100.0, 1 + (i % 2) as u32) };
        rows.push((0..4).map(|_| center + rng.random::<f32>()).collect::<Vec<_>>());
        labels.push(label);
    }
    let emb = EmbeddingTable::from_rows(&rows).unwrap();
    let labels = ClassIds::new(labels);
    let g = build_neighbor_graph(&emb, 5).unwrap();
    let n_same = same_class_neighbor_count(&g, &labels).unwrap();
    assert_eq!(n_same, oracle_same_class(&oracle_knn(&emb, 5), labels.as_slice()));
    assert!(n_same[..100].iter().all(|&n| n == 5));
    let mixed_mean = n_same[100..].iter().map(|&n| n as f64).sum::<f64>() / 100.0;
    assert!((mixed_mean - 2.5).abs() < 0.5, "mixed mean {mixed_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutation_equivariance(seed in 0u64..1000, n in 8usize..40, k in 1usize..6) {
        let emb = seeded_table(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        // permuted row p holds original row perm[p]
        let rows: Vec<Vec<f32>> = perm.iter().map(|&o| emb.row(o).to_vec()).collect();
        let permuted = EmbeddingTable::from_rows(&rows).unwrap();
        let g = build_neighbor_graph(&emb, k).unwrap();
        let gp = build_neighbor_graph(&permuted, k).unwrap();
        // uniform random floats make exact distance ties vanishingly unlikely,
        // so neighbor sets map through the permutation
        for p in 0..n {
            let mapped: Vec<u32> = gp.neighbors(p).iter().map(|&q| perm[q as usize] as u32).collect();
            prop_assert_eq!(&mapped[..], g.neighbors(perm[p]));
            prop_assert_eq!(gp.distances(p), g.distances(perm[p]));
        }
    }

    #[test]
    fn engine_equals_oracle(seed in 0u64..1000, n in 3usize..30, dim in 1usize..5) {
        let emb = seeded_table(seed, n, dim);
        let k = 1 + (seed as usize % (n - 1));
        let g = build_neighbor_graph(&emb, k).unwrap();
        for (i, (idx, _)) in oracle_knn(&emb, k).iter().enumerate() {
            prop_assert_eq!(g.neighbors(i), &idx[..]);
        }
    }
}
