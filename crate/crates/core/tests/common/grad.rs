//! Finite-difference checks shared by the gradient tests and the
//! acceptance suite.

use ndarray::Array2;
use simfuse::embed::{batch_objective, EmbeddingModel, Encoder, ModelSpec, TaskSpec};
use simfuse::losses::{evaluate, LossKind};
use simfuse::similarity::{LatentDistance, SimilarityMatrix, SimilarityRole};
use simfuse::structure::{AlphaSchedule, DataMatrix};

pub const H: f64 = 1e-6;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

pub const KINDS: [LossKind; 4] = [LossKind::Mse, LossKind::Kl, LossKind::Bce, LossKind::Gkl { gamma: 0.1 }];

/// Relative error of the analytic loss gradient on a random 8×8 instance.
pub fn loss_case(seed: u64, kind: LossKind) -> f64 {
    let mut r = super::rng(seed);
    let px = super::random_similarity(8, 0.05, 0.95, &mut r);
    let pz = super::random_similarity(8, 0.05, 0.95, &mut r);
    let analytic = evaluate(kind, px.view(), pz.view(), None).unwrap().grad_wrt_latent;
    assert!((0..8).all(|i| analytic[[i, i]] == 0.0));
    let mut numeric = Array2::<f64>::zeros((8, 8));
    for i in 0..8 {
        for j in 0..8 {
            if i == j {
                continue;
            }
            let mut plus = pz.clone();
            let mut minus = pz.clone();
            plus[[i, j]] += H;
            minus[[i, j]] -= H;
            let f = |p: &Array2<f64>| evaluate(kind, px.view(), p.view(), None).unwrap().value;
            numeric[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * H);
        }
    }
    rel_err(analytic.as_slice().unwrap(), numeric.as_slice().unwrap())
}

pub fn target(n: usize, seed: u64) -> SimilarityMatrix {
    let mut r = super::rng(seed);
    SimilarityMatrix::from_raw(
        super::random_similarity(n, 0.02, 0.98, &mut r),
        SimilarityRole::Target,
        1e-7,
    )
    .unwrap()
}

pub fn spec_for(model: ModelSpec, loss: LossKind, latent: LatentDistance) -> TaskSpec {
    TaskSpec {
        model,
        loss,
        latent_distance: latent,
        // Moderate tails keep every latent similarity away from the clamp.
        nu_z: 1.0,
        sigma_z: 1.0,
        ..TaskSpec::dr()
    }
}

/// Central differences of the batch loss over every parameter.
pub fn numeric_grads(
    spec: &TaskSpec,
    x: &DataMatrix,
    targets: &[(SimilarityMatrix, AlphaSchedule)],
    model: &EmbeddingModel,
    idx: &[usize],
) -> Vec<Vec<f64>> {
    let loss = |m: &EmbeddingModel| batch_objective(spec, x, targets, m, idx, 0.0, None).unwrap().0;
    let sizes: Vec<usize> = model.clone().blocks_mut().iter().map(|(_, b)| b.len()).collect();
    let mut out = Vec::new();
    for (b, &len) in sizes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.blocks_mut()[b].1[k] += H;
            let mut minus = model.clone();
            minus.blocks_mut()[b].1[k] -= H;
            *gk = (loss(&plus) - loss(&minus)) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

/// Relative error of the full analytic parameter gradient.
pub fn model_error(model: EmbeddingModel, x: &DataMatrix, spec: &TaskSpec, seed: u64) -> f64 {
    let n = x.n_rows();
    let targets = vec![(target(n, seed + 1000), AlphaSchedule::constant(1.0))];
    let idx: Vec<usize> = (0..n).rev().collect();
    let (_, analytic) = batch_objective(spec, x, &targets, &model, &idx, 0.0, None).unwrap();
    let numeric = numeric_grads(spec, x, &targets, &model, &idx);
    // One vector over all parameters: the output bias has an exactly zero
    // gradient under euclidean distance, so per-block ratios are noise.
    let a: Vec<f64> = analytic.concat();
    let nmr: Vec<f64> = numeric.concat();
    rel_err(&a, &nmr)
}

pub fn free_case(seed: u64, loss: LossKind, latent: LatentDistance) -> f64 {
    let x = super::data(6, 3, seed);
    let mut r = super::rng(seed);
    let model = EmbeddingModel::FreeCoordinates(super::gaussian(6, 3, &mut r));
    model_error(model, &x, &spec_for(ModelSpec::Free { dim: 3 }, loss, latent), seed)
}

pub fn encoder_case(seed: u64, loss: LossKind, latent: LatentDistance) -> f64 {
    let x = super::data(5, 4, seed);
    let mut r = super::rng(seed + 77);
    let model = EmbeddingModel::Encoder(Encoder::new(&[4, 6, 5, 3], 1, &mut r).unwrap());
    let spec = spec_for(
        ModelSpec::Encoder {
            hidden: vec![6, 5],
            out_dim: 3,
            tap: 1,
        },
        loss,
        latent,
    );
    model_error(model, &x, &spec, seed)
}
