mod common;

use common::{class_mean_oracle, rel_err, softmax_oracle};
use ndarray::{Array2, Axis};
use pda_core::{
    build_prototypes, build_prototypes_onehot, build_prototypes_true, BundleMeta,
    FeatureBundle, PrototypeSet, PseudoLabeling,
};
use proptest::prelude::*;
use rand::Rng;

fn assert_matches_oracle(protos: &PrototypeSet, oracle: &[Option<Vec<f64>>], tol: f64) {
    for (l, expected) in oracle.iter().enumerate() {
        match expected {
            None => assert!(!protos.present[l], "class {l} should be absent"),
            Some(v) => {
                assert!(protos.present[l]);
                for (j, &e) in v.iter().enumerate() {
                    let got = protos.vectors[[l, j]];
                    assert!(rel_err(got, e) <= tol, "class {l} dim {j}: {got} vs {e}");
                }
            }
        }
    }
}

/// Pseudo-labels and weights derived independently of the library.
fn oracle_labeling(bundle: &FeatureBundle) -> (Vec<usize>, Vec<f64>) {
    let probs = softmax_oracle(bundle.logits());
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for row in probs.rows() {
        let v = row.to_vec();
        let l = common::argmax_oracle(&v);
        labels.push(l);
        weights.push(v[l]);
    }
    (labels, weights)
}

#[test]
fn weighted_prototypes_match_double_loop() {
    let mut rng = common::rng(50);
    let b = common::random_bundle(&mut rng, 50, 8, 5);
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let (labels, weights) = oracle_labeling(&b);
    assert_eq!(lab.pseudo, labels);
    let protos = build_prototypes(&b, &lab).unwrap();
    let oracle = class_mean_oracle(b.features(), &labels, &weights, 5);
    assert_matches_oracle(&protos, &oracle, 1e-10);
}

#[test]
fn onehot_prototypes_match_unweighted_oracle() {
    let mut rng = common::rng(51);
    let b = common::random_bundle(&mut rng, 80, 6, 4);
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let protos = build_prototypes_onehot(&b, &lab).unwrap();
    let oracle = class_mean_oracle(b.features(), &lab.pseudo, &vec![1.0; 80], 4);
    assert_matches_oracle(&protos, &oracle, 1e-10);
}

#[test]
fn true_prototypes_match_group_by_mean() {
    let mut rng = common::rng(52);
    let b = common::random_bundle(&mut rng, 60, 5, 7);
    let labels = b.labels().unwrap();
    let protos = build_prototypes_true(&b).unwrap();
    for l in 0..7 {
        let members: Vec<usize> = (0..60).filter(|&i| labels[i] == l).collect();
        if members.is_empty() {
            assert!(!protos.present[l]);
            continue;
        }
        let mean = b.features().select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
        for j in 0..5 {
            assert!(rel_err(protos.vectors[[l, j]], mean[j]) < 1e-10);
        }
    }
}

#[test]
fn true_labels_equal_to_pseudo_labels_match_onehot() {
    let mut rng = common::rng(53);
    let raw = common::random_bundle(&mut rng, 40, 4, 3);
    let lab = PseudoLabeling::from_logits(raw.logits().view()).unwrap();
    let b = FeatureBundle::new(
        raw.features().clone(),
        raw.logits().clone(),
        Some(lab.pseudo.clone()),
        raw.meta().clone(),
    )
    .unwrap();
    assert_eq!(
        build_prototypes_true(&b).unwrap(),
        build_prototypes_onehot(&b, &lab).unwrap()
    );
}

#[test]
fn mass_is_sum_of_member_weights() {
    let mut rng = common::rng(54);
    let b = common::random_bundle(&mut rng, 120, 3, 6);
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let protos = build_prototypes(&b, &lab).unwrap();
    let mut total_support = 0;
    for l in 0..6 {
        let mut mass = 0.0;
        let mut support = 0;
        for i in 0..120 {
            if lab.pseudo[i] == l {
                mass += lab.weights[i];
                support += 1;
            }
        }
        assert_eq!(protos.mass[l], mass);
        assert_eq!(protos.support[l], support);
        assert_eq!(protos.present[l], support > 0);
        assert_eq!(protos.present[l], protos.mass[l] > 0.0);
        total_support += support;
    }
    assert_eq!(total_support, 120);
}

#[test]
fn prototype_is_convex_combination_of_members() {
    let mut rng = common::rng(55);
    let b = common::random_bundle(&mut rng, 12, 2, 2);
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let protos = build_prototypes(&b, &lab).unwrap();
    for l in 0..2 {
        if !protos.present[l] {
            continue;
        }
        let mut coeff_sum = 0.0;
        let mut point = [0.0; 2];
        for i in 0..12 {
            if lab.pseudo[i] != l {
                continue;
            }
            let coeff = lab.weights[i] / protos.mass[l];
            assert!(coeff > 0.0 && coeff <= 1.0);
            coeff_sum += coeff;
            for j in 0..2 {
                point[j] += coeff * b.features()[[i, j]];
            }
        }
        assert!((coeff_sum - 1.0).abs() < 1e-12);
        for j in 0..2 {
            assert!((point[j] - protos.vectors[[l, j]]).abs() < 1e-12);
        }
    }
}

fn permuted(b: &FeatureBundle, perm: &[usize]) -> FeatureBundle {
    let labels = b.labels().map(|l| perm.iter().map(|&i| l[i]).collect());
    FeatureBundle::new(
        b.features().select(Axis(0), perm),
        b.logits().select(Axis(0), perm),
        labels,
        b.meta().clone(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_equivalence(n in 1usize..=200, d in 1usize..=16, c in 2usize..=10, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let b = common::random_bundle(&mut rng, n, d, c);
        let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
        let protos = build_prototypes(&b, &lab).unwrap();
        let (labels, weights) = oracle_labeling(&b);
        prop_assert_eq!(&lab.pseudo, &labels);
        let oracle = class_mean_oracle(b.features(), &labels, &weights, c);
        assert_matches_oracle(&protos, &oracle, 1e-10);
    }

    #[test]
    fn shuffling_rows_keeps_prototypes(n in 2usize..80, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let b = common::random_bundle(&mut rng, n, 4, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = permuted(&b, &perm);
        let p1 = build_prototypes(&b, &PseudoLabeling::from_logits(b.logits().view()).unwrap()).unwrap();
        let p2 = build_prototypes(&shuffled, &PseudoLabeling::from_logits(shuffled.logits().view()).unwrap()).unwrap();
        prop_assert_eq!(&p1.present, &p2.present);
        prop_assert_eq!(&p1.support, &p2.support);
        for l in 0..3 {
            if !p1.present[l] { continue; }
            for j in 0..4 {
                prop_assert!((p1.vectors[[l, j]] - p2.vectors[[l, j]]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn all_same_class_leaves_others_absent() {
    let features = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
    let logits = Array2::from_shape_fn((5, 3), |(_, j)| if j == 1 { 4.0 } else { 0.0 });
    let b = FeatureBundle::new(features, logits, None, BundleMeta::new(3, 2)).unwrap();
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let p = build_prototypes(&b, &lab).unwrap();
    assert_eq!(p.present, vec![false, true, false]);
    assert_eq!(p.support, vec![0, 5, 0]);
    assert_eq!(p.mass[0], 0.0);
}

#[test]
fn dump_writes_inspection_arrays() {
    let mut rng = common::rng(56);
    let b = common::random_bundle(&mut rng, 30, 4, 3);
    let lab = PseudoLabeling::from_logits(b.logits().view()).unwrap();
    let p = build_prototypes(&b, &lab).unwrap();
    let dir = tempfile::tempdir().unwrap();
    p.dump(dir.path()).unwrap();
    let protos = pda_core::npy::read_npy(&dir.path().join("prototypes.npy")).unwrap();
    assert_eq!(protos.shape, vec![3, 4]);
    let support = pda_core::npy::read_npy(&dir.path().join("support.npy")).unwrap();
    assert_eq!(
        support.data,
        pda_core::npy::NpyData::I64(p.support.iter().map(|&s| s as i64).collect())
    );
    let mass = pda_core::npy::read_npy(&dir.path().join("mass.npy")).unwrap();
    assert_eq!(mass.data, pda_core::npy::NpyData::F64(p.mass.clone()));
}
