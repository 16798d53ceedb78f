//! t-distribution similarities, per-point normalisation and graph fusion.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::special::ln_t_kernel_constant;
use crate::structure::{unit_rows, AlphaSchedule, DistanceMatrix};

/// Lower/upper clamp margin applied to every similarity.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;
/// Stand-in for an infinite number of degrees of freedom (Gaussian limit).
pub const DEFAULT_NU_X: f64 = 1e5;
const SIGMA_FLOOR: f64 = 1e-12;

/// Degrees of freedom and clamp margin of a t-kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    nu: f64,
    clamp_eps: f64,
    ln_c: f64,
}

impl KernelParams {
    pub fn new(nu: f64) -> Result<Self> {
        Self::with_clamp(nu, DEFAULT_CLAMP_EPS)
    }

    pub fn with_clamp(nu: f64, clamp_eps: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::invalid(format!(
                "degrees of freedom must be finite and > 0, got {nu}"
            )));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::invalid(format!(
                "clamp eps must lie in (0, 0.5), got {clamp_eps}"
            )));
        }
        Ok(Self {
            nu,
            clamp_eps,
            ln_c: ln_t_kernel_constant(nu),
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    /// κ(0, ν), the largest value the kernel takes.
    pub fn peak(&self) -> f64 {
        self.ln_c.exp()
    }

    /// Unclamped κ(u, ν), floored at the smallest normal `f64` so that it
    /// stays positive where the exact value underflows.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let nu = self.nu;
        (self.ln_c - 0.5 * (nu + 1.0) * (u * u / nu).ln_1p())
            .exp()
            .max(f64::MIN_POSITIVE)
    }

    /// dκ/du given κ(u) already evaluated.
    #[inline]
    pub fn derivative(&self, u: f64, k: f64) -> f64 {
        let nu = self.nu;
        -k * (nu + 1.0) * u / (nu + u * u)
    }

    #[inline]
    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clamp_eps, 1.0 - self.clamp_eps)
    }
}

/// κ(d, ν) = C(ν)·(1 + d²/ν)^{−(ν+1)/2}.
pub fn t_kernel(d: f64, nu: f64) -> Result<f64> {
    if !d.is_finite() {
        return Err(Error::invalid(format!("distance must be finite, got {d}")));
    }
    Ok(KernelParams::new(nu)?.eval(d))
}

/// Location/scale used to normalise distances before the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    /// Per-point offset μᵢ of the input distances.
    pub mu_per_point: Vec<f64>,
    /// Per-point scale found during calibration.
    pub sigma_per_point: Vec<f64>,
    /// Global input scale σ.
    pub sigma: f64,
    pub mu_latent: f64,
    pub sigma_latent: f64,
}

impl NormalizationStats {
    /// Zero offsets and unit scales for `n` points.
    pub fn identity(n: usize) -> Self {
        Self {
            mu_per_point: vec![0.0; n],
            sigma_per_point: vec![1.0; n],
            sigma: 1.0,
            mu_latent: 0.0,
            sigma_latent: 1.0,
        }
    }

    /// Replaces the calibrated σ with a fixed value.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be finite and > 0, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_latent(mut self, mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!(
                "latent (mu, sigma) = ({mu}, {sigma}) is invalid"
            )));
        }
        self.mu_latent = mu;
        self.sigma_latent = sigma;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    /// μᵢ is the row minimum, σᵢ the spread of the k closest entries.
    Statistic,
    /// σᵢ chosen so the k nearest neighbours carry log₂(k + 1) total similarity.
    BinarySearch,
}

/// Sorted off-diagonal row entries, truncated to the `k` smallest.
fn nearest_entries(row: ndarray::ArrayView1<'_, f64>, i: usize, k: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    if k < vals.len() {
        vals.select_nth_unstable_by(k - 1, f64::total_cmp);
        vals.truncate(k);
    }
    vals.sort_unstable_by(f64::total_cmp);
    vals
}

/// Sum of kernel values of the neighbours at scale `sigma`.
pub fn calibration_mass(neighbours: &[f64], mu: f64, sigma: f64, kernel: &KernelParams) -> f64 {
    neighbours.iter().map(|&d| kernel.eval((d - mu) / sigma)).sum()
}

fn bisect_sigma(neighbours: &[f64], mu: f64, target: f64, kernel: &KernelParams) -> f64 {
    let mass = |s: f64| calibration_mass(neighbours, mu, s, kernel);
    let (mut lo, mut hi) = (SIGMA_FLOOR.ln(), 0.0f64);
    // Grow the bracket until the mass exceeds the target.
    while mass(hi.exp()) < target {
        if hi > 200.0 {
            return hi.exp();
        }
        hi += 2.0;
    }
    if mass(lo.exp()) >= target {
        return SIGMA_FLOOR;
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..64 {
        mid = 0.5 * (lo + hi);
        let r = mass(mid.exp()) - target;
        if r.abs() < 1e-5 {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid.exp()
}

/// Per-point offsets μᵢ and scale σ for a distance matrix.
///
/// `kernel` is only used by [`CalibrationMode::BinarySearch`].
pub fn calibrate_normalization(
    d: &DistanceMatrix,
    target_neighbors: usize,
    mode: CalibrationMode,
    kernel: &KernelParams,
) -> Result<NormalizationStats> {
    let n = d.n();
    if target_neighbors == 0 || target_neighbors >= n {
        return Err(Error::invalid(format!(
            "target_neighbors must satisfy 1 <= k < n, got k={target_neighbors}, n={n}"
        )));
    }
    let view = d.view();
    let per_point: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let near = nearest_entries(view.row(i), i, target_neighbors);
            let mu = near[0];
            let sigma = match mode {
                CalibrationMode::Statistic => {
                    let mean = near.iter().sum::<f64>() / near.len() as f64;
                    let var = near.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / near.len() as f64;
                    var.sqrt()
                }
                CalibrationMode::BinarySearch => {
                    let target = ((target_neighbors + 1) as f64).log2();
                    bisect_sigma(&near, mu, target, kernel)
                }
            };
            (mu, sigma)
        })
        .collect();
    let (mu_per_point, sigma_per_point): (Vec<f64>, Vec<f64>) = per_point.into_iter().unzip();
    let sigma = (sigma_per_point.iter().sum::<f64>() / n as f64).max(SIGMA_FLOOR);
    Ok(NormalizationStats {
        mu_per_point,
        sigma_per_point,
        sigma,
        mu_latent: 0.0,
        sigma_latent: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityRole {
    Target,
    Latent,
}

/// Square similarity matrix whose off-diagonal entries lie in
/// `[eps, 1 − eps]`. The diagonal is stored as zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    p: Array2<f64>,
    role: SimilarityRole,
    clamp_eps: f64,
}

impl SimilarityMatrix {
    /// Clamps off-diagonal entries and zeroes the diagonal.
    pub fn from_raw(mut p: Array2<f64>, role: SimilarityRole, clamp_eps: f64) -> Result<Self> {
        let (n, m) = p.dim();
        if n != m {
            return Err(Error::invalid(format!("similarity matrix must be square, got {n}x{m}")));
        }
        if let Some(v) = p.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite similarity {v}")));
        }
        clamp_offdiag(&mut p, clamp_eps);
        Ok(Self { p, role, clamp_eps })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn role(&self) -> SimilarityRole {
        self.role
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }

    /// `B × B` sub-matrix for the given indices (diagonal zero).
    pub fn block(&self, idx: &[usize]) -> Array2<f64> {
        let b = idx.len();
        let mut out = Array2::zeros((b, b));
        for (r, &i) in idx.iter().enumerate() {
            let row = self.p.row(i);
            for (c, &j) in idx.iter().enumerate() {
                if r != c {
                    out[[r, c]] = row[j];
                }
            }
        }
        out
    }
}

/// Clamps off-diagonal entries into `[eps, 1 − eps]` and zeroes the diagonal.
pub fn clamp_offdiag(p: &mut Array2<f64>, eps: f64) {
    for ((i, j), v) in p.indexed_iter_mut() {
        *v = if i == j { 0.0 } else { v.clamp(eps, 1.0 - eps) };
    }
}

/// Target similarities `κ((D[i][j] − μᵢ)/σ, ν)`; row-conditional, so the
/// result is generally asymmetric.
pub fn similarity_from_distances(
    d: &DistanceMatrix,
    stats: &NormalizationStats,
    kernel: &KernelParams,
) -> Result<SimilarityMatrix> {
    let n = d.n();
    if stats.mu_per_point.len() != n {
        return Err(Error::invalid(format!(
            "normalisation has {} offsets for {n} points",
            stats.mu_per_point.len()
        )));
    }
    let view = d.view();
    let mut flat = vec![0.0f64; n * n];
    flat.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        let mu = stats.mu_per_point[i];
        for (j, o) in out.iter_mut().enumerate() {
            if i != j {
                *o = kernel.clamp(kernel.eval((view[[i, j]] - mu) / stats.sigma));
            }
        }
    });
    let p = Array2::from_shape_vec((n, n), flat).expect("n*n buffer");
    Ok(SimilarityMatrix {
        p,
        role: SimilarityRole::Target,
        clamp_eps: kernel.clamp_eps(),
    })
}

/// Σₜ αₜ(step_fraction)·pₜ, clamped.
pub fn static_fuse(parts: &[(&SimilarityMatrix, AlphaSchedule)], step_fraction: f64) -> Result<SimilarityMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("static fusion needs at least one part"))?;
    let n = first.0.n();
    if let Some((p, _)) = parts.iter().find(|(p, _)| p.n() != n) {
        return Err(Error::invalid(format!("cannot fuse {n}x{n} with {0}x{0}", p.n())));
    }
    let eps = first.0.clamp_eps;
    let mut acc = Array2::<f64>::zeros((n, n));
    for (p, alpha) in parts {
        acc.scaled_add(alpha.at(step_fraction), &p.p);
    }
    clamp_offdiag(&mut acc, eps);
    Ok(SimilarityMatrix {
        p: acc,
        role: SimilarityRole::Target,
        clamp_eps: eps,
    })
}

/// Batch form of [`static_fuse`] restricted to `idx × idx`.
pub fn static_fuse_block(
    parts: &[(&SimilarityMatrix, AlphaSchedule)],
    idx: &[usize],
    step_fraction: f64,
    eps: f64,
) -> Array2<f64> {
    let b = idx.len();
    let mut acc = Array2::<f64>::zeros((b, b));
    for (p, alpha) in parts {
        let a = alpha.at(step_fraction);
        for (r, &i) in idx.iter().enumerate() {
            let row = p.p.row(i);
            let mut out = acc.row_mut(r);
            for (c, &j) in idx.iter().enumerate() {
                out[c] += a * row[j];
            }
        }
    }
    clamp_offdiag(&mut acc, eps);
    acc
}

/// β·p_static + p_intermediate on raw blocks, clamped.
pub fn dynamic_fuse_raw(
    p_static: ArrayView2<'_, f64>,
    p_intermediate: ArrayView2<'_, f64>,
    beta: f64,
    eps: f64,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    if p_static.dim() != p_intermediate.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch {:?} vs {:?}",
            p_static.dim(),
            p_intermediate.dim()
        )));
    }
    let mut out = &p_static * beta + &p_intermediate;
    clamp_offdiag(&mut out, eps);
    Ok(out)
}

/// β·p_static + p_intermediate, clamped. The intermediate similarity is a
/// constant: no gradient flows back through it.
pub fn dynamic_fuse(
    p_static: &SimilarityMatrix,
    p_intermediate: &SimilarityMatrix,
    beta: f64,
) -> Result<SimilarityMatrix> {
    let p = dynamic_fuse_raw(p_static.view(), p_intermediate.view(), beta, p_static.clamp_eps)?;
    Ok(SimilarityMatrix {
        p,
        role: SimilarityRole::Target,
        clamp_eps: p_static.clamp_eps,
    })
}

/// Distance between latent rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentDistance {
    Euclidean,
    /// `1 − cos` of L₂-normalised rows; zero rows use the first basis direction.
    OneMinusCosine,
}

/// Pairwise latent distances (symmetric, zero diagonal).
pub fn latent_distances(z: ArrayView2<'_, f64>, kind: LatentDistance) -> Array2<f64> {
    let b = z.nrows();
    let mut out = Array2::<f64>::zeros((b, b));
    match kind {
        LatentDistance::Euclidean => {
            let z = z.as_standard_layout();
            for i in 0..b {
                let zi = z.row(i);
                for j in (i + 1)..b {
                    let zj = z.row(j);
                    let s: f64 = zi.iter().zip(zj.iter()).map(|(a, c)| (a - c) * (a - c)).sum();
                    let v = s.sqrt();
                    out[[i, j]] = v;
                    out[[j, i]] = v;
                }
            }
        }
        LatentDistance::OneMinusCosine => {
            let u = unit_rows(z);
            let gram = u.dot(&u.t());
            for i in 0..b {
                for j in (i + 1)..b {
                    let v = 1.0 - gram[[i, j]].min(gram[[j, i]]);
                    out[[i, j]] = v;
                    out[[j, i]] = v;
                }
            }
        }
    }
    out
}

/// Latent similarities `κ((d_Z − μ_Z)/σ_Z, ν_Z)`, clamped.
pub fn latent_similarity(
    z: ArrayView2<'_, f64>,
    distance: LatentDistance,
    stats: &NormalizationStats,
    kernel: &KernelParams,
) -> Result<SimilarityMatrix> {
    if z.ncols() == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    let mut p = latent_distances(z, distance);
    let (mu, sigma) = (stats.mu_latent, stats.sigma_latent);
    p.mapv_inplace(|d| kernel.eval((d - mu) / sigma));
    clamp_offdiag(&mut p, kernel.clamp_eps());
    Ok(SimilarityMatrix {
        p,
        role: SimilarityRole::Latent,
        clamp_eps: kernel.clamp_eps(),
    })
}

/// Similarities of intermediate activations, normalised by the row minimum
/// and the mean spread of each row's `k` closest entries.
pub fn activation_similarity(
    h: ArrayView2<'_, f64>,
    distance: LatentDistance,
    k: usize,
    kernel: &KernelParams,
) -> Array2<f64> {
    let b = h.nrows();
    let d = latent_distances(h, distance);
    if b < 2 {
        return Array2::zeros((b, b));
    }
    let k = k.clamp(1, b - 1);
    let mut mus = Vec::with_capacity(b);
    let mut spread = 0.0;
    for (i, row) in d.axis_iter(Axis(0)).enumerate() {
        let near = nearest_entries(row, i, k);
        let mean = near.iter().sum::<f64>() / near.len() as f64;
        let var = near.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / near.len() as f64;
        mus.push(near[0]);
        spread += var.sqrt();
    }
    let sigma = (spread / b as f64).max(SIGMA_FLOOR);
    let mut p = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            if i != j {
                p[[i, j]] = kernel.eval((d[[i, j]] - mus[i]) / sigma);
            }
        }
    }
    p
}
