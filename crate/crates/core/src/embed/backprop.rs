//! Chain rule from ∂L/∂p_Z through the latent kernel and distance into the
//! embedding coordinates and model parameters.

use ndarray::{Array2, ArrayView2};

use super::model::{EmbeddingModel, ForwardPass};
use crate::similarity::{latent_distances, KernelParams, LatentDistance, NormalizationStats};
use crate::structure::unit_rows;

/// Latent similarities of a batch plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct LatentForward {
    /// Clamped similarities, zero diagonal.
    pub pz: Array2<f64>,
    pub distances: Array2<f64>,
    /// Where the clamp replaced the kernel value (gradient is zero there).
    pub clamped: Array2<bool>,
}

pub fn latent_forward(
    z: ArrayView2<'_, f64>,
    kind: LatentDistance,
    stats: &NormalizationStats,
    kernel: &KernelParams,
) -> LatentForward {
    let distances = latent_distances(z, kind);
    let b = z.nrows();
    let mut pz = Array2::zeros((b, b));
    let mut clamped = Array2::from_elem((b, b), false);
    let (lo, hi) = (kernel.clamp_eps(), 1.0 - kernel.clamp_eps());
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let k = kernel.eval((distances[[i, j]] - stats.mu_latent) / stats.sigma_latent);
            if k < lo || k > hi {
                clamped[[i, j]] = true;
            }
            pz[[i, j]] = k.clamp(lo, hi);
        }
    }
    LatentForward { pz, distances, clamped }
}

/// ∂L/∂Z for a batch given ∂L/∂p_Z.
pub fn latent_backward(
    grad_pz: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    fwd: &LatentForward,
    kind: LatentDistance,
    stats: &NormalizationStats,
    kernel: &KernelParams,
) -> Array2<f64> {
    let b = z.nrows();
    let dim = z.ncols();
    // w[i][j] = ∂L/∂d_ij summed over both orderings of the pair.
    let mut w = Array2::<f64>::zeros((b, b));
    let sigma = stats.sigma_latent;
    let dl_dd = |i: usize, j: usize| -> f64 {
        let g = grad_pz[[i, j]];
        if g == 0.0 || fwd.clamped[[i, j]] {
            return 0.0;
        }
        let u = (fwd.distances[[i, j]] - stats.mu_latent) / sigma;
        g * kernel.derivative(u, kernel.eval(u)) / sigma
    };
    for i in 0..b {
        for j in (i + 1)..b {
            let v = dl_dd(i, j) + dl_dd(j, i);
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    let mut dz = Array2::<f64>::zeros((b, dim));
    match kind {
        LatentDistance::Euclidean => {
            for i in 0..b {
                for j in (i + 1)..b {
                    let d = fwd.distances[[i, j]];
                    if d == 0.0 || w[[i, j]] == 0.0 {
                        continue;
                    }
                    let s = w[[i, j]] / d;
                    for c in 0..dim {
                        let diff = s * (z[[i, c]] - z[[j, c]]);
                        dz[[i, c]] += diff;
                        dz[[j, c]] -= diff;
                    }
                }
            }
        }
        LatentDistance::OneMinusCosine => {
            // d_ij = 1 − û_i·û_j, so ∂L/∂û_i = −Σ_j w_ij û_j.
            let u = unit_rows(z);
            let gu = -w.dot(&u);
            for i in 0..b {
                let zi = z.row(i);
                let norm = zi.dot(&zi).sqrt();
                if norm == 0.0 {
                    continue;
                }
                let ui = u.row(i);
                let radial = gu.row(i).dot(&ui);
                for c in 0..dim {
                    dz[[i, c]] = (gu[[i, c]] - radial * ui[c]) / norm;
                }
            }
        }
    }
    dz
}

/// Parameter gradients of the loss, composing the kernel, distance and
/// model backward passes.
#[allow(clippy::too_many_arguments)]
pub fn backprop_through_similarity(
    model: &EmbeddingModel,
    pass: &ForwardPass,
    idx: &[usize],
    grad_pz: ArrayView2<'_, f64>,
    fwd: &LatentForward,
    kind: LatentDistance,
    stats: &NormalizationStats,
    kernel: &KernelParams,
) -> Vec<Vec<f64>> {
    let dz = latent_backward(grad_pz, pass.z.view(), fwd, kind, stats, kernel);
    model.backward(pass, idx, dz.view())
}
