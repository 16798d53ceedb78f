//! Pairwise dissimilarity losses between target and latent similarities.
//!
//! Every loss is a sum over ordered off-diagonal pairs and returns its
//! gradient with respect to the latent similarities. The diagonal is never
//! read and its gradient is exactly zero.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

pub const DEFAULT_GKL_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    Kl,
    Bce,
    /// Cross-entropy plus `gamma`-weighted L₁ discrepancy.
    Gkl {
        gamma: f64,
    },
}

impl LossKind {
    pub fn gkl() -> Self {
        LossKind::Gkl {
            gamma: DEFAULT_GKL_GAMMA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Kl => "kl",
            LossKind::Bce => "bce",
            LossKind::Gkl { .. } => "gkl",
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            LossKind::Gkl { gamma } => *gamma,
            _ => 0.0,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "kl" => Ok(LossKind::Kl),
            "bce" => Ok(LossKind::Bce),
            "gkl" => Ok(LossKind::gkl()),
            other => Err(Error::invalid(format!(
                "unknown loss {other:?} (expected mse, kl, bce or gkl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// ∂L/∂p_Z, zero on the diagonal and on masked pairs.
    pub grad_wrt_latent: Array2<f64>,
    pub kind: LossKind,
}

#[inline]
fn pair_term(kind: LossKind, px: f64, pz: f64) -> (f64, f64) {
    match kind {
        LossKind::Mse => {
            let r = px - pz;
            (r * r, -2.0 * r)
        }
        LossKind::Kl => (px * (px / pz).ln(), -px / pz),
        LossKind::Bce => (
            -px * pz.ln() - (1.0 - px) * (-pz).ln_1p(),
            (pz - px) / (pz * (1.0 - pz)),
        ),
        LossKind::Gkl { gamma } => {
            let diff = pz - px;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            (-px * pz.ln() + gamma * diff.abs(), -px / pz + gamma * sign)
        }
    }
}

/// Evaluates `kind` on raw blocks. `keep`, when given, selects the pairs that
/// contribute; excluded pairs add nothing to the value and get zero gradient.
pub fn evaluate(
    kind: LossKind,
    px: ArrayView2<'_, f64>,
    pz: ArrayView2<'_, f64>,
    keep: Option<ArrayView2<'_, bool>>,
) -> Result<LossResult> {
    if px.dim() != pz.dim() || px.nrows() != px.ncols() {
        return Err(Error::invalid(format!(
            "loss needs equal square matrices, got {:?} and {:?}",
            px.dim(),
            pz.dim()
        )));
    }
    if let Some(m) = keep {
        if m.dim() != px.dim() {
            return Err(Error::invalid(format!(
                "mask shape {:?} does not match {:?}",
                m.dim(),
                px.dim()
            )));
        }
    }
    if let LossKind::Gkl { gamma } = kind {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
        }
    }
    let n = px.nrows();
    let mut grad = Array2::<f64>::zeros((n, n));
    let mut value = 0.0;
    // Row-ordered reduction keeps results reproducible.
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i == j || keep.is_some_and(|m| !m[[i, j]]) {
                continue;
            }
            let (v, g) = pair_term(kind, px[[i, j]], pz[[i, j]]);
            row_sum += v;
            grad[[i, j]] = g;
        }
        value += row_sum;
    }
    Ok(LossResult {
        value,
        grad_wrt_latent: grad,
        kind,
    })
}

fn check_pair(px: &SimilarityMatrix, pz: &SimilarityMatrix) -> Result<()> {
    if px.n() != pz.n() {
        return Err(Error::invalid(format!(
            "similarity sizes differ: {} vs {}",
            px.n(),
            pz.n()
        )));
    }
    Ok(())
}

/// Σ (p_X − p_Z)².
pub fn mse_loss(px: &SimilarityMatrix, pz: &SimilarityMatrix) -> Result<LossResult> {
    check_pair(px, pz)?;
    evaluate(LossKind::Mse, px.view(), pz.view(), None)
}

/// Σ p_X·log(p_X/p_Z), oriented to be minimised at p_Z = p_X.
pub fn kl_loss(px: &SimilarityMatrix, pz: &SimilarityMatrix) -> Result<LossResult> {
    check_pair(px, pz)?;
    evaluate(LossKind::Kl, px.view(), pz.view(), None)
}

/// Σ −p_X·log p_Z − (1 − p_X)·log(1 − p_Z).
pub fn bce_loss(px: &SimilarityMatrix, pz: &SimilarityMatrix) -> Result<LossResult> {
    check_pair(px, pz)?;
    evaluate(LossKind::Bce, px.view(), pz.view(), None)
}

/// Σ −p_X·log p_Z + γ·|p_X − p_Z|.
pub fn gkl_loss(px: &SimilarityMatrix, pz: &SimilarityMatrix, gamma: f64) -> Result<LossResult> {
    check_pair(px, pz)?;
    evaluate(LossKind::Gkl { gamma }, px.view(), pz.view(), None)
}

/// Zeroes the gradient where a clamp was active in the forward pass.
pub(crate) fn mask_clamped(grad: &mut Array2<f64>, active: ArrayView2<'_, bool>) {
    Zip::from(grad).and(active).for_each(|g, &a| {
        if a {
            *g = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{SimilarityRole, DEFAULT_CLAMP_EPS};
    use ndarray::array;

    fn sim(p: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::from_raw(p, SimilarityRole::Target, DEFAULT_CLAMP_EPS).unwrap()
    }

    #[test]
    fn equal_inputs() {
        let p = sim(array![[0.0, 0.3, 0.8], [0.5, 0.0, 0.2], [0.1, 0.9, 0.0]]);
        let mse = mse_loss(&p, &p).unwrap();
        assert_eq!(mse.value, 0.0);
        assert!(mse.grad_wrt_latent.iter().all(|&g| g == 0.0));
        assert_eq!(kl_loss(&p, &p).unwrap().value, 0.0);
        let bce = bce_loss(&p, &p).unwrap();
        assert!(bce.grad_wrt_latent.iter().all(|g| g.abs() < 1e-12));
        let gkl = gkl_loss(&p, &p, 0.1).unwrap();
        for ((i, j), &g) in gkl.grad_wrt_latent.indexed_iter() {
            assert_eq!(g, if i == j { 0.0 } else { -1.0 });
        }
    }

    #[test]
    fn single_pair_values() {
        let px = array![[0.0, 1.0], [0.0, 0.0]];
        let pz = array![[0.0, 0.0], [0.0, 0.0]];
        let r = evaluate(LossKind::Mse, px.view(), pz.view(), None).unwrap();
        assert_eq!(r.value, 1.0);

        let px = array![[0.0, 0.5], [0.5, 0.0]];
        let pz = array![[0.0, 0.25], [0.25, 0.0]];
        let r = evaluate(LossKind::Kl, px.view(), pz.view(), None).unwrap();
        assert!((r.value - 2.0 * 0.5 * 2f64.ln()).abs() < 1e-15);

        let half = array![[0.0, 0.5], [0.5, 0.0]];
        let r = evaluate(LossKind::Bce, half.view(), half.view(), None).unwrap();
        assert!((r.value / 2.0 - 2f64.ln()).abs() < 1e-15);

        let r = evaluate(LossKind::gkl(), half.view(), half.view(), None).unwrap();
        assert!((r.value / 2.0 - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gkl_gamma_zero_is_cross_entropy() {
        let px = array![[0.0, 0.3, 0.6], [0.2, 0.0, 0.4], [0.7, 0.1, 0.0]];
        let pz = array![[0.0, 0.5, 0.1], [0.6, 0.0, 0.3], [0.2, 0.8, 0.0]];
        let r = evaluate(LossKind::Gkl { gamma: 0.0 }, px.view(), pz.view(), None).unwrap();
        let mut ce = 0.0;
        for i in 0..3 {
            let mut row = 0.0;
            for j in 0..3 {
                if i != j {
                    row += -px[[i, j]] * pz[[i, j]].ln();
                }
            }
            ce += row;
        }
        assert_eq!(r.value, ce);
    }

    #[test]
    fn mask_excludes_pairs() {
        let px = array![[0.0, 0.3], [0.2, 0.0]];
        let pz = array![[0.0, 0.5], [0.6, 0.0]];
        let keep = array![[true, false], [true, true]];
        let r = evaluate(LossKind::Mse, px.view(), pz.view(), Some(keep.view())).unwrap();
        assert!((r.value - 0.16).abs() < 1e-15);
        assert_eq!(r.grad_wrt_latent[[0, 1]], 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::zeros((3, 3));
        assert!(evaluate(LossKind::Mse, a.view(), b.view(), None).is_err());
        assert!(mse_loss(&sim(a), &sim(b)).is_err());
    }

    #[test]
    fn parse_kind() {
        assert_eq!("GKL".parse::<LossKind>().unwrap(), LossKind::Gkl { gamma: 0.1 });
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
