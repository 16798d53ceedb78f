mod common;

use common::oracles::oracle_trust;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use simfuse::eval::{
    continuity, knn_accuracy, linear_probe, split_indices, trustworthiness, LabeledEmbedding, ProbeConfig,
};

#[test]
fn swapped_endpoints_on_a_line() {
    let x = array![[0.0], [1.0], [2.0], [3.0]];
    let z = array![[3.0], [1.0], [2.0], [0.0]];
    let t = trustworthiness(x.view(), z.view(), 1).unwrap();
    assert_eq!(t, oracle_trust(x.view(), z.view(), 1));
    assert_eq!(t, 0.375);
    assert_eq!(continuity(x.view(), z.view(), 1).unwrap(), 0.375);
}

#[test]
fn random_thirty_points() {
    for seed in 0..10 {
        let mut r = common::rng(seed);
        let x = common::gaussian(30, 5, &mut r);
        let z = common::gaussian(30, 2, &mut r);
        for k in [1, 3, 5, 10, 14] {
            assert_eq!(
                trustworthiness(x.view(), z.view(), k).unwrap(),
                oracle_trust(x.view(), z.view(), k)
            );
            assert_eq!(
                continuity(x.view(), z.view(), k).unwrap(),
                oracle_trust(z.view(), x.view(), k)
            );
        }
    }
}

#[test]
fn identity_embeddings_score_one() {
    for seed in 0..20u64 {
        let n = 25 + (seed as usize * 9) % 176;
        let x = common::gaussian(n, 6, &mut common::rng(seed));
        for k in [1, 5, 10] {
            assert_eq!(trustworthiness(x.view(), x.view(), k).unwrap(), 1.0);
            assert_eq!(continuity(x.view(), x.view(), k).unwrap(), 1.0);
        }
    }
}

fn oracle_knn(train: &LabeledEmbedding, test: &LabeledEmbedding, k: usize) -> f64 {
    let mut correct = 0;
    for q in 0..test.n() {
        let mut d: Vec<(f64, usize)> = (0..train.n())
            .map(|j| {
                let s: f64 = train
                    .z
                    .row(j)
                    .iter()
                    .zip(test.z.row(q))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (s, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = std::collections::BTreeMap::<usize, usize>::new();
        for &(_, j) in &d[..k] {
            *votes.entry(train.labels[j]).or_default() += 1;
        }
        let best = votes.values().max().copied().unwrap();
        let winner = votes.iter().find(|(_, &v)| v == best).map(|(&c, _)| c).unwrap();
        if winner == test.labels[q] {
            correct += 1;
        }
    }
    correct as f64 / test.n() as f64
}

#[test]
fn knn_accuracy_matches_exhaustive_vote() {
    for seed in 0..10 {
        let mut r = common::rng(seed);
        let z = common::gaussian(50, 2, &mut r);
        let labels: Vec<usize> = (0..50).map(|_| r.random_range(0..4)).collect();
        let all = LabeledEmbedding::new(z, labels).unwrap();
        let (tr, te) = split_indices(50, 0.3, seed).unwrap();
        let (tr, te) = (all.select(&tr).unwrap(), all.select(&te).unwrap());
        for k in [1, 2, 4, 5] {
            assert_eq!(knn_accuracy(&tr, &te, k).unwrap(), oracle_knn(&tr, &te, k));
        }
    }
}

#[test]
fn knn_accuracy_on_separated_clusters() {
    let (x, labels) = common::blobs(&[vec![0.0, 0.0], vec![20.0, 0.0], vec![0.0, 20.0]], 20, 1.0, 3);
    let train = LabeledEmbedding::new(x.values().to_owned(), labels).unwrap();
    let test = LabeledEmbedding::new(array![[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], vec![0, 1, 2]).unwrap();
    assert_eq!(knn_accuracy(&train, &test, 5).unwrap(), 1.0);
}

fn separable(seed: u64) -> LabeledEmbedding {
    let mut r = common::rng(seed);
    let mut z = Array2::zeros((200, 2));
    let mut labels = vec![0; 200];
    for i in 0..200 {
        let c = i % 2;
        z[[i, 0]] = r.random_range(-3.0..3.0);
        z[[i, 1]] = if c == 0 {
            r.random_range(-3.0..-0.5)
        } else {
            r.random_range(0.5..3.0)
        };
        labels[i] = c;
    }
    LabeledEmbedding::new(z, labels).unwrap()
}

#[test]
fn probe_on_separable_data() {
    let e = separable(1);
    let (tr, te) = split_indices(200, 0.25, 1).unwrap();
    let acc = linear_probe(
        &e.select(&tr).unwrap(),
        &e.select(&te).unwrap(),
        &ProbeConfig::default(),
    )
    .unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn probe_is_affine_invariant() {
    let e = separable(2);
    let (tr, te) = split_indices(200, 0.25, 2).unwrap();
    let base = linear_probe(
        &e.select(&tr).unwrap(),
        &e.select(&te).unwrap(),
        &ProbeConfig::default(),
    )
    .unwrap();
    let a = array![[2.0, 0.7], [-1.5, 0.3]];
    let moved = LabeledEmbedding::new(e.z.dot(&a) + &array![10.0, -4.0], e.labels.clone()).unwrap();
    let acc = linear_probe(
        &moved.select(&tr).unwrap(),
        &moved.select(&te).unwrap(),
        &ProbeConfig::default(),
    )
    .unwrap();
    assert!((acc - base).abs() <= 0.01, "{base} vs {acc}");
}

#[test]
fn probe_on_shuffled_labels_is_chance() {
    let mut r = common::rng(8);
    let z = common::gaussian(1000, 16, &mut r);
    let mut labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    labels.shuffle(&mut r);
    let e = LabeledEmbedding::new(z, labels).unwrap();
    let (tr, te) = split_indices(1000, 0.2, 8).unwrap();
    let acc = linear_probe(
        &e.select(&tr).unwrap(),
        &e.select(&te).unwrap(),
        &ProbeConfig::default(),
    )
    .unwrap();
    assert!((0.05..=0.2).contains(&acc), "{acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rigid_motion_leaves_ranks_alone(seed in 0u64..10_000, angle in 0.0f64..std::f64::consts::TAU, tx in -50.0f64..50.0, ty in -50.0f64..50.0) {
        let mut r = common::rng(seed);
        let x = common::gaussian(24, 4, &mut r);
        let z = common::gaussian(24, 2, &mut r);
        let rot = array![[angle.cos(), angle.sin()], [-angle.sin(), angle.cos()]];
        let moved = z.dot(&rot) + &array![tx, ty];
        for k in [1, 3, 7] {
            // Rotation can perturb exact ties in the last bits, so compare to tolerance.
            let a = trustworthiness(x.view(), z.view(), k).unwrap();
            let b = trustworthiness(x.view(), moved.view(), k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let a = continuity(x.view(), z.view(), k).unwrap();
            let b = continuity(x.view(), moved.view(), k).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_is_swapped_trustworthiness(seed in 0u64..10_000, n in 6usize..40) {
        let mut r = common::rng(seed);
        let x = common::gaussian(n, 3, &mut r);
        let z = common::gaussian(n, 2, &mut r);
        let k = (n - 1) / 2;
        prop_assert_eq!(continuity(x.view(), z.view(), k).unwrap(), trustworthiness(z.view(), x.view(), k).unwrap());
    }

    #[test]
    fn knn_accuracy_is_a_fraction(seed in 0u64..10_000, k in 1usize..10) {
        let mut r = common::rng(seed);
        let z = common::gaussian(30, 2, &mut r);
        let labels: Vec<usize> = (0..30).map(|_| r.random_range(0..3)).collect();
        let e = LabeledEmbedding::new(z, labels).unwrap();
        let a = knn_accuracy(&e, &e, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
