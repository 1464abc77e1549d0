mod common;

use std::collections::{BTreeMap, BTreeSet};

use ocd_engine::assignment::hungarian;
use ocd_engine::compose::slerp;
use ocd_engine::encode::{build_leaders, cluster_matrix, ClusteringConfig};
use ocd_engine::eval::{acc, make_synthetic, SyntheticSpec};
use ocd_engine::infer::{LeaderMemory, MemoryLeader};
use ocd_engine::refine::{compute_centers, refine_dataset, RefinementConfig};
use ocd_engine::train::{train, LossWeights, TrainConfig};
use ocd_engine::types::squared_distance;
use ocd_engine::{EmbeddingMatrix, LabeledDataset, RngSeed, SourceTag};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
}

fn unit_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..12).prop_flat_map(|d| (unit(d), unit(d)))
}

fn matrix(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec((-20i32..=20).prop_map(f64::from), r * c))
    })
}

/// Partition of row indices, independent of cluster numbering.
fn partition(ids: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut m: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &c) in ids.iter().enumerate() {
        m.entry(c).or_default().insert(i);
    }
    m.into_values().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slerp_endpoints_norm_symmetry((a, b) in unit_pair(), l in 0.0f64..=1.0) {
        prop_assume!(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() > -0.999);
        let z = slerp(&a, &b, l).unwrap();
        let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9);
        let back = slerp(&b, &a, 1.0 - l).unwrap();
        for (x, y) in z.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(squared_distance(&slerp(&a, &b, 0.0).unwrap(), &a) < 1e-18);
        prop_assert!(squared_distance(&slerp(&a, &b, 1.0).unwrap(), &b) < 1e-18);
    }

    #[test]
    fn slerp_angle_is_linear_in_lambda((a, b) in unit_pair(), l in 0.0f64..=1.0) {
        let cos = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0);
        let theta = cos(&a, &b).acos();
        prop_assume!(theta > 1e-3 && theta < 3.1);
        let z = slerp(&a, &b, l).unwrap();
        prop_assert!((cos(&a, &z).acos() - l * theta).abs() < 1e-6);
    }

    #[test]
    fn hungarian_matches_brute_force((r, c, cost) in matrix(6)) {
        let got = hungarian(&cost, r, c).unwrap();
        prop_assert_eq!(got.cost, brute_force_assignment(&cost, r, c));
        let cols: BTreeSet<usize> = got.pairs().map(|(_, j)| j).collect();
        prop_assert_eq!(cols.len(), r.min(c));
    }

    #[test]
    fn acc_matches_brute_force_and_decomposes(
        y_true in prop::collection::vec(0i64..5, 1..30),
        seed in any::<u64>(),
        old_cut in 0i64..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y_pred: Vec<i64> = y_true
            .iter()
            .map(|&t| if rand::Rng::random_bool(&mut rng, 0.7) { t + 100 } else { rand::Rng::random_range(&mut rng, 0..6) })
            .collect();
        let old: BTreeSet<i64> = (0..old_cut).collect();
        let r = acc(&y_true, &y_pred, &old).unwrap();
        let n = y_true.len() as f64;
        prop_assert_eq!(r.acc_all, brute_force_agreement(&y_true, &y_pred) as f64 / n);
        let recomposed = r.acc_old * r.n_old as f64 + r.acc_new * r.n_new as f64;
        prop_assert!((recomposed - r.acc_all * n).abs() < 1e-9);
        // renaming predicted labels never changes the score
        let renamed: Vec<i64> = y_pred.iter().map(|p| 7 * p + 3).collect();
        prop_assert_eq!(acc(&y_true, &renamed, &old).unwrap().acc_all, r.acc_all);
    }

    #[test]
    fn refine_is_monotone_and_idempotent(seed in any::<u64>(), g1 in -1.0f64..1.0, g2 in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = LabeledDataset::with_known_labels(
            EmbeddingMatrix::from_rows(4, &(0..6).map(|_| unit_vector(&mut rng, 4)).collect::<Vec<_>>()).unwrap(),
            vec![0, 1, 2, 0, 1, 2],
            SourceTag::Support,
        ).unwrap();
        let generated = LabeledDataset::unlabeled(
            EmbeddingMatrix::from_rows(4, &(0..20).map(|_| unit_vector(&mut rng, 4)).collect::<Vec<_>>()).unwrap(),
            SourceTag::Generated,
        );
        let centers = compute_centers(&support).unwrap();
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = refine_dataset(&generated, &centers, &RefinementConfig { gamma: lo });
        let b = refine_dataset(&generated, &centers, &RefinementConfig { gamma: hi });
        let rows = |d: &LabeledDataset| d.embeddings().iter_rows().map(|r| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<BTreeSet<_>>();
        prop_assert!(rows(&a).is_subset(&rows(&b)));
        let again = refine_dataset(&a, &centers, &RefinementConfig { gamma: lo });
        prop_assert_eq!(again.embeddings(), a.embeddings());
    }

    #[test]
    fn leaders_conserve_mass(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, 3)).collect();
        let labels: Vec<i64> = (0..n as i64).map(|i| i % 3).collect();
        let data = LabeledDataset::with_known_labels(
            EmbeddingMatrix::from_rows(3, &feats).unwrap(), labels.clone(), SourceTag::Support,
        ).unwrap();
        let set = build_leaders(&data, data.embeddings()).unwrap();
        for (m, &l) in set.labels.iter().enumerate() {
            let members: Vec<&Vec<f64>> = feats.iter().zip(&labels).filter(|(_, &x)| x == l).map(|(f, _)| f).collect();
            for j in 0..3 {
                let total: f64 = members.iter().map(|f| f[j]).sum();
                prop_assert!((set.leaders.row(m)[j] * members.len() as f64 - total).abs() < 1e-12);
            }
            for f in &members {
                prop_assert!(squared_distance(f, set.leaders.row(m)) <= set.delta_max);
            }
        }
    }

    #[test]
    fn clustering_is_permutation_equivariant(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 24;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, 3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let cfg = ClusteringConfig { knn_k: k, ..Default::default() };
        let a = cluster_matrix(&EmbeddingMatrix::from_rows(3, &rows).unwrap(), &cfg).unwrap();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let b = cluster_matrix(&EmbeddingMatrix::from_rows(3, &shuffled).unwrap(), &cfg).unwrap();
        // map b's partition back to original indices
        let mut back = vec![0; n];
        for (pos, &orig) in perm.iter().enumerate() {
            back[orig] = b.cluster_ids[pos];
        }
        prop_assert_eq!(partition(&a.cluster_ids), partition(&back));
    }

    #[test]
    fn oci_bookkeeping(seed in any::<u64>(), delta in 0.01f64..2.0, eta in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaders: Vec<MemoryLeader> = (0..3)
            .map(|i| MemoryLeader { label: i * 2, vector: unit_vector(&mut rng, 3), is_known: true })
            .collect();
        let stream = EmbeddingMatrix::from_rows(3, &(0..40).map(|_| unit_vector(&mut rng, 3)).collect::<Vec<_>>()).unwrap();
        let mut mem = LeaderMemory::new(leaders, delta, eta).unwrap();
        let verdicts = mem.run(&stream).unwrap();
        let created = verdicts.iter().filter(|v| v.is_new_category).count();
        prop_assert_eq!(mem.len(), 3 + created);
        let labels: BTreeSet<i64> = mem.leaders.iter().map(|l| l.label).collect();
        prop_assert_eq!(labels.len(), mem.len());
        for v in &verdicts {
            prop_assert_eq!(v.is_new_category, v.matched_leader_index.is_none());
            prop_assert_eq!(v.is_new_category, v.min_sq_distance >= delta);
        }
    }

    #[test]
    fn oci_frozen_leaders_classify_by_nearest(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaders: Vec<MemoryLeader> = (0..4)
            .map(|i| MemoryLeader { label: i, vector: unit_vector(&mut rng, 3), is_known: true })
            .collect();
        // a threshold nothing reaches: every item is classified, none created
        let mut mem = LeaderMemory::new(leaders.clone(), 5.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..30).map(|_| unit_vector(&mut rng, 3)).collect();
        for r in &rows {
            let v = mem.step(r).unwrap();
            let nearest = leaders
                .iter()
                .min_by(|a, b| squared_distance(&a.vector, r).total_cmp(&squared_distance(&b.vector, r)))
                .unwrap();
            prop_assert_eq!(v.assigned_label, nearest.label);
        }
        prop_assert_eq!(&mem.leaders, &leaders);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn parameter_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = grad_instance(&mut rng);
        let w = LossWeights { sup: 1.0, reg: 1.0, sle: 0.5, ce: 0.5 };
        let e = grad_check(&inst, w, 1e-5);
        prop_assert!(e <= 1e-4, "relative error {e:e}");
    }
}

fn small_agency(seed: u64) -> LabeledDataset {
    let spec = SyntheticSpec { dim: 8, samples_per_category: 12, ..SyntheticSpec::easy(RngSeed(seed)) };
    make_synthetic(&spec).unwrap().support
}

#[test]
fn training_is_deterministic() {
    let data = small_agency(1);
    let cfg = TrainConfig { epochs: 3, proj_dim: 8, ..Default::default() };
    let a = train(&data, &cfg, RngSeed(9)).unwrap();
    let b = train(&data, &cfg, RngSeed(9)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.leaders, b.leaders);
    assert_eq!(a.history, b.history);
    let c = train(&data, &cfg, RngSeed(10)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn leader_loss_decreases_during_training() {
    let data = small_agency(2);
    let cfg = TrainConfig { epochs: 10, alpha_warmup_epochs: 2, proj_dim: 8, ..Default::default() };
    let out = train(&data, &cfg, RngSeed(3)).unwrap();
    let first = out.history.first().unwrap().loss.sle;
    let last = out.history.last().unwrap().loss.sle;
    assert!(last < first, "L_sle went from {first} to {last}");
}
