mod common;

use ndarray::Array2;
use simfuse::embed::{
    batch_objective, fit, run_dr_task, run_ge_task, run_kd_task, teacher_target, GePreset, ModelSpec, TaskSpec,
};
use simfuse::eval::{knn_accuracy, split_indices, LabeledEmbedding};
use simfuse::losses::LossKind;
use simfuse::similarity::{SimilarityMatrix, SimilarityRole};
use simfuse::structure::{AlphaSchedule, DataMatrix};

fn toy_spec(model: ModelSpec, epochs: usize) -> TaskSpec {
    TaskSpec {
        model,
        epochs,
        knn_k: 5,
        ..TaskSpec::dr()
    }
}

#[test]
fn full_batch_mse_loss_decreases() {
    let (x, _) = common::blobs(
        &[vec![0.0, 0.0, 0.0], vec![8.0, 0.0, 0.0], vec![0.0, 8.0, 0.0]],
        10,
        0.5,
        4,
    );
    let mut spec = toy_spec(ModelSpec::Free { dim: 2 }, 10);
    spec.loss = LossKind::Mse;
    spec.adam.batch_size = 30;
    spec.adam.base_lr = 0.01;
    let out = run_dr_task(&x, 5, &spec).unwrap();
    let losses: Vec<f64> = out.log.epochs.iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

fn blob_accuracy(z: &Array2<f64>, labels: &[usize]) -> f64 {
    let all = LabeledEmbedding::new(z.clone(), labels.to_vec()).unwrap();
    let (tr, te) = split_indices(labels.len(), 0.2, 0).unwrap();
    knn_accuracy(&all.select(&tr).unwrap(), &all.select(&te).unwrap(), 5).unwrap()
}

#[test]
fn two_blobs_separate() {
    let (x, labels) = common::two_blobs(200, 10, 20.0, 7);
    let spec = toy_spec(ModelSpec::encoder(2), 30);
    let out = run_dr_task(&x, 10, &spec).unwrap();
    assert_eq!(blob_accuracy(&out.embedding, &labels), 1.0);
    let later = &out.log.epochs;
    assert!(later[9].loss < later[0].loss);
}

#[test]
fn k_at_least_n_is_rejected() {
    let x = common::data(5, 2, 0);
    assert!(run_dr_task(&x, 5, &toy_spec(ModelSpec::Free { dim: 2 }, 1)).is_err());
}

#[test]
fn ge_on_disconnected_cliques() {
    // Two 6-cliques with identical features: only the graph separates them.
    let x = DataMatrix::new(Array2::from_shape_fn((12, 3), |(i, j)| ((i % 6) * 3 + j) as f64 * 0.1)).unwrap();
    let mut edges = Vec::new();
    for base in [0, 6] {
        for a in 0..6 {
            for b in (a + 1)..6 {
                edges.push((base + a, base + b));
            }
        }
    }
    let spec = TaskSpec {
        model: ModelSpec::Free { dim: 2 },
        epochs: 200,
        alpha2: AlphaSchedule::constant(0.0),
        knn_k: 3,
        calibration_neighbors: 3,
        ..TaskSpec::ge()
    };
    let out = run_ge_task(&x, Some(&edges), &spec).unwrap();
    let z = &out.embedding;
    let dist = |i: usize, j: usize| (&z.row(i) - &z.row(j)).mapv(|v| v * v).sum().sqrt();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for i in 0..12 {
        for j in (i + 1)..12 {
            if (i < 6) == (j < 6) {
                within += dist(i, j);
                nw += 1;
            } else {
                across += dist(i, j);
                na += 1;
            }
        }
    }
    assert!(within / nw as f64 * 2.0 < across / na as f64, "{within} {across}");
}

#[test]
fn ge_with_zero_alpha_ignores_feature_order() {
    let (x, _) = common::two_blobs(20, 3, 6.0, 2);
    let edges: Vec<(usize, usize)> = (0..19).map(|i| (i, i + 1)).collect();
    let spec = TaskSpec {
        model: ModelSpec::Free { dim: 2 },
        epochs: 3,
        alpha2: AlphaSchedule::constant(0.0),
        knn_k: 3,
        calibration_neighbors: 3,
        ..TaskSpec::ge()
    };
    let a = run_ge_task(&x, Some(&edges), &spec).unwrap();
    let mut spec_on = spec.clone();
    spec_on.alpha2 = AlphaSchedule::constant(1.0);
    let b = run_ge_task(&x, Some(&edges), &spec_on).unwrap();
    assert_ne!(a.embedding, b.embedding);
    // With α₂ = 0 the kNN part is never built, so a run with k too large
    // for the feature graph still succeeds.
    let mut big_k = spec.clone();
    big_k.knn_k = 50;
    assert_eq!(run_ge_task(&x, Some(&edges), &big_k).unwrap().embedding, a.embedding);
}

#[test]
fn cora_preset_values() {
    let v = GePreset::Cora.values();
    assert_eq!((v.nu_z, v.alpha2), (0.001, 1.0));
    let spec = TaskSpec::ge();
    assert_eq!((spec.nu_z, spec.alpha2.initial), (0.001, 1.0));
}

#[test]
fn one_hot_teacher_gives_flat_rows() {
    let n = 6;
    let teacher = DataMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i == j)))).unwrap();
    let p = teacher_target(&teacher, &TaskSpec::kd()).unwrap();
    for i in 0..n {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| p.get(i, j)).collect();
        assert!(row.iter().all(|&v| v == row[0]), "{row:?}");
    }
}

#[test]
fn kd_rejects_misaligned_rows() {
    let x = common::data(10, 3, 1);
    let t = common::data(9, 3, 2);
    assert!(run_kd_task(&x, &t, &TaskSpec::kd()).is_err());
}

#[test]
fn unmasked_and_all_kept_are_identical() {
    let x = common::data(12, 4, 3);
    let mut r = common::rng(3);
    let target = SimilarityMatrix::from_raw(
        common::random_similarity(12, 0.01, 0.99, &mut r),
        SimilarityRole::Target,
        1e-7,
    )
    .unwrap();
    let targets = vec![(target, AlphaSchedule::constant(1.0))];
    let spec = toy_spec(ModelSpec::encoder(2), 1);
    let model = simfuse::embed::EmbeddingModel::Encoder(
        simfuse::embed::Encoder::new(&[4, 256, 256, 2], 1, &mut common::rng(9)).unwrap(),
    );
    let idx: Vec<usize> = (0..12).collect();
    let keep_all = Array2::from_shape_fn((12, 12), |(i, j)| i != j);
    let a = batch_objective(&spec, &x, &targets, &model, &idx, 0.0, None).unwrap();
    let b = batch_objective(&spec, &x, &targets, &model, &idx, 0.0, Some(&keep_all)).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn fit_is_deterministic() {
    let (x, _) = common::two_blobs(60, 4, 6.0, 5);
    let mut spec = toy_spec(ModelSpec::encoder(2), 4);
    spec.adam.batch_size = 16;
    spec.pair_mask_fraction = 0.3;
    let a = run_dr_task(&x, 5, &spec).unwrap();
    let b = run_dr_task(&x, 5, &spec).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.embedding, b.embedding);
}

#[test]
fn fit_rejects_bad_targets() {
    let x = common::data(8, 2, 0);
    let spec = toy_spec(ModelSpec::Free { dim: 2 }, 1);
    assert!(fit(&spec, &x, &[]).is_err());
    let small = SimilarityMatrix::from_raw(Array2::zeros((5, 5)), SimilarityRole::Target, 1e-7).unwrap();
    assert!(fit(&spec, &x, &[(small, AlphaSchedule::constant(1.0))]).is_err());
}
