#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use featlens::adversary::*;
use featlens::bundle::{ClassIds, EmbeddingTable};
use featlens::neighbors::build_neighbor_graph;
use featlens::synth::{generate_synthetic, SyntheticSpec};
use proptest::prelude::*;

#[test]
fn planted_overlap_concentrates_adversary_mass() {
    for seed in 0..5 {
        let (train, val) = generate_synthetic(&SyntheticSpec::planted(seed)).unwrap();
        let b = &train.bundle;
        let g = build_neighbor_graph(&b.embeddings, 5).unwrap();
        let prof = adversary_profile(&g, &b.labels, &b.predictions, 4, NeighborScope::FalsePositives).unwrap();
        let row = prof.row(0).expect("minority class has training false positives");
        assert!(row.proportions[1] >= 0.9, "seed {seed}: {:?}", row.proportions);

        // recount from the brute-force neighbor lists
        let knn = oracle_knn(&b.embeddings, 5);
        let mut counts = vec![0u64; 4];
        let mut fp = 0u64;
        for i in 0..b.len() {
            if b.labels.get(i) == 0 && b.predictions.get(i) != 0 {
                fp += 1;
                for &j in &knn[i].0 {
                    let y = b.labels.get(j as usize);
                    if y != 0 {
                        counts[y as usize] += 1;
                    }
                }
            }
        }
        assert_eq!(row.counts, counts);
        assert!(row.total() <= fp * 5);

        let v = val_fp_profile(&val.bundle.labels, &val.bundle.predictions, 4).unwrap();
        let vrow = v.row(0).expect("validation false positives predicted as the minority class");
        assert!(vrow.proportions[1] >= 0.9, "seed {seed}: {:?}", vrow.proportions);
    }
}

#[test]
fn all_instance_scope_counts_every_row() {
    let (train, _) = generate_synthetic(&SyntheticSpec::planted(1)).unwrap();
    let b = &train.bundle;
    let g = build_neighbor_graph(&b.embeddings, 5).unwrap();
    let fp = adversary_profile(&g, &b.labels, &b.predictions, 4, NeighborScope::FalsePositives).unwrap();
    let all = adversary_profile(&g, &b.labels, &b.predictions, 4, NeighborScope::AllInstances).unwrap();
    for c in 0..4u32 {
        let f = fp.row(c).map_or(0, |r| r.total());
        let a = all.row(c).map_or(0, |r| r.total());
        assert!(a >= f);
    }
    // with perfect predictions only the all-instance scope sees anything
    let none = adversary_profile(&g, &b.labels, &b.labels, 4, NeighborScope::FalsePositives).unwrap();
    assert!(none.rows.iter().all(Option::is_none));
}

#[test]
fn fdr_one_dimensional_hand_value() {
    // class 0: {0,1,2} mean 1, unbiased var 1; class 1: {2,3,4} mean 3, var 1
    // (1 - 3)^2 / (1 + 1) = 2
    let emb = EmbeddingTable::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
    let f = fdr_matrix(&emb, &ClassIds::new(vec![0, 0, 0, 1, 1, 1]), 2, FdrAggregation::Mean).unwrap();
    assert_eq!(f.get(0, 1), 2.0);
}

#[test]
fn kld_two_point_example() {
    let direct = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let v = kld(&[0.5, 0.5], &[0.25, 0.75], 1e-12).unwrap();
    assert!((v - 0.1438).abs() < 1e-3);
    assert!((v - direct).abs() < 1e-9);
    assert!((v - oracle_kld(&[0.5, 0.5], &[0.25, 0.75], 1e-12)).abs() < 1e-12);
}

#[test]
fn planted_divergence_beats_random() {
    for seed in 0..5 {
        let (train, val) = generate_synthetic(&SyntheticSpec::planted(seed)).unwrap();
        let b = &train.bundle;
        let g = build_neighbor_graph(&b.embeddings, 5).unwrap();
        let adv = adversary_profile(&g, &b.labels, &b.predictions, 4, NeighborScope::FalsePositives).unwrap();
        let vfp = val_fp_profile(&val.bundle.labels, &val.bundle.predictions, 4).unwrap();
        let fdr = fdr_matrix(&b.embeddings, &b.labels, 4, FdrAggregation::Mean).unwrap();
        let opts = DivergenceOptions::default();
        let r = divergence_report(&adv, &fdr, &vfp, &opts).unwrap();
        for row in &r.rows {
            // direct evaluation of the same sums
            let p: Vec<f64> = (0..4).filter(|&a| a != row.class_id as usize)
                .map(|a| vfp.row(row.class_id).unwrap().proportions[a]).collect();
            let q: Vec<f64> = (0..4).filter(|&a| a != row.class_id as usize)
                .map(|a| adv.row(row.class_id).unwrap().proportions[a]).collect();
            assert!((row.kld_nnb - oracle_kld(&p, &q, opts.epsilon).max(0.0)).abs() < 1e-9);
            let u = vec![1.0 / 3.0; 3];
            assert!((row.kld_random - oracle_kld(&p, &u, opts.epsilon).max(0.0)).abs() < 1e-9);
        }
        assert!(r.summary.nnb_kld < r.summary.random_kld, "seed {seed}: {:?}", r.summary);
        assert!(r.summary.nnb_random_factor > 1.0);
    }
}

#[test]
fn emitted_distributions_sum_to_one() {
    let (train, val) = generate_synthetic(&SyntheticSpec::planted(2)).unwrap();
    let b = &train.bundle;
    let g = build_neighbor_graph(&b.embeddings, 5).unwrap();
    let adv = adversary_profile(&g, &b.labels, &b.predictions, 4, NeighborScope::AllInstances).unwrap();
    let vfp = val_fp_profile(&val.bundle.labels, &val.bundle.predictions, 4).unwrap();
    let fdr = fdr_matrix(&b.embeddings, &b.labels, 4, FdrAggregation::Mean).unwrap();
    for prof in [&adv, &vfp] {
        for (r, row) in prof.rows.iter().enumerate() {
            if let Some(row) = row {
                assert!((row.proportions.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                assert_eq!(row.proportions[r], 0.0);
            }
        }
    }
    for r in 0..4 {
        let d = fdr_distribution(&fdr, r, 1e-9);
        assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kld_is_non_negative(p in proptest::collection::vec(0.0f64..1.0, 1..8), seed in 0u64..1000) {
        let q: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((seed as usize * 31 + i * 17) % 13) as f64).collect();
        prop_assert!(kld(&p, &q, 1e-9).unwrap() >= 0.0);
        prop_assert!(kld(&p, &p, 1e-9).unwrap() <= 1e-12);
    }

    #[test]
    fn fdr_symmetric_with_zero_diagonal(seed in 0u64..1000) {
        let emb = seeded_table(seed, 40, 5);
        let labels = seeded_labels(seed, 40, 3);
        for agg in [FdrAggregation::Mean, FdrAggregation::Max] {
            let f = fdr_matrix(&emb, &labels, 3, agg).unwrap();
            for i in 0..3 {
                prop_assert_eq!(f.get(i, i), 0.0);
                for k in 0..3 {
                    prop_assert_eq!(f.get(i, k), f.get(k, i));
                    prop_assert!(f.get(i, k) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn positive_scaling_preserves_profiles_and_fdr(seed in 0u64..200) {
        let emb = seeded_table(seed, 60, 4);
        let labels = seeded_labels(seed, 60, 3);
        let preds = seeded_labels(seed + 1, 60, 3);
        let scaled = emb.scaled(4.0).unwrap();
        let g = build_neighbor_graph(&emb, 5).unwrap();
        let gs = build_neighbor_graph(&scaled, 5).unwrap();
        let a = adversary_profile(&g, &labels, &preds, 3, NeighborScope::FalsePositives).unwrap();
        let b = adversary_profile(&gs, &labels, &preds, 3, NeighborScope::FalsePositives).unwrap();
        prop_assert_eq!(a, b);
        // x4 is exact in binary floating point, so the ratios match to rounding
        let f = fdr_matrix(&emb, &labels, 3, FdrAggregation::Mean).unwrap();
        let fs = fdr_matrix(&scaled, &labels, 3, FdrAggregation::Mean).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                prop_assert!((f.get(i, k) - fs.get(i, k)).abs() <= 1e-9 * f.get(i, k).max(1.0));
            }
        }
    }
}
