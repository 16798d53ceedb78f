use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, OptimizerState};
use super::backprop::{backprop_through_similarity, latent_forward};
use super::model::{EmbeddingModel, Encoder};
use crate::error::{Error, Result};
use crate::losses::{evaluate, mask_clamped, LossKind};
use crate::similarity::{
    activation_similarity, dynamic_fuse_raw, static_fuse_block, KernelParams, LatentDistance, NormalizationStats,
    SimilarityMatrix, DEFAULT_CLAMP_EPS, DEFAULT_NU_X,
};
use crate::structure::{AlphaSchedule, DataMatrix};

// Separate stream for pair masks so masking never perturbs batch order.
const MASK_STREAM: u64 = 0x6d61_736b_5f72_6e67;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Dr,
    Ge,
    Kd,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Dr => "dr",
            Task::Ge => "ge",
            Task::Kd => "kd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Static,
    /// Blend with tap-layer similarities, β decaying linearly 1 → 0.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Free {
        dim: usize,
    },
    Encoder {
        hidden: Vec<usize>,
        out_dim: usize,
        tap: usize,
    },
}

impl ModelSpec {
    pub fn encoder(out_dim: usize) -> Self {
        ModelSpec::Encoder {
            hidden: vec![256, 256],
            out_dim,
            tap: 1,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ModelSpec::Free { dim } => *dim,
            ModelSpec::Encoder { out_dim, .. } => *out_dim,
        }
    }

    fn build<R: Rng>(&self, n: usize, input_dim: usize, rng: &mut R) -> Result<EmbeddingModel> {
        match self {
            ModelSpec::Free { dim } => EmbeddingModel::free(n, *dim, rng),
            ModelSpec::Encoder { hidden, out_dim, tap } => {
                let mut widths = Vec::with_capacity(hidden.len() + 2);
                widths.push(input_dim);
                widths.extend_from_slice(hidden);
                widths.push(*out_dim);
                Ok(EmbeddingModel::Encoder(Encoder::new(&widths, *tap, rng)?))
            }
        }
    }
}

/// Everything that configures one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: Task,
    pub model: ModelSpec,
    pub nu_x: f64,
    pub nu_z: f64,
    pub mu_z: f64,
    pub sigma_z: f64,
    /// Fixed input scale σ; `None` keeps the calibrated value.
    pub sigma_x: Option<f64>,
    pub loss: LossKind,
    pub fusion: Fusion,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub pair_mask_fraction: f64,
    pub latent_distance: LatentDistance,
    /// Neighbours of the feature kNN graph.
    pub knn_k: usize,
    /// Neighbours used by normalisation calibration.
    pub calibration_neighbors: usize,
    /// Weight schedule of the feature kNN graph in graph embedding.
    pub alpha2: AlphaSchedule,
    /// Forces ordered reductions everywhere.
    pub deterministic: bool,
    /// Geodesic paths with more edges than this count as unreachable.
    pub hop_limit: Option<usize>,
    pub clamp_eps: f64,
}

impl TaskSpec {
    /// Dimension reduction defaults (MNIST-like inputs).
    pub fn dr() -> Self {
        Self {
            task: Task::Dr,
            model: ModelSpec::encoder(2),
            nu_x: DEFAULT_NU_X,
            nu_z: 0.01,
            mu_z: 0.0,
            sigma_z: 1.0,
            sigma_x: Some(5.0),
            loss: LossKind::gkl(),
            fusion: Fusion::Static,
            epochs: 300,
            seed: 0,
            adam: AdamConfig::default(),
            pair_mask_fraction: 0.0,
            latent_distance: LatentDistance::Euclidean,
            knn_k: 10,
            calibration_neighbors: 5,
            alpha2: AlphaSchedule::constant(0.0),
            deterministic: true,
            hop_limit: None,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    /// Graph embedding defaults (CORA preset).
    pub fn ge() -> Self {
        let preset = GePreset::Cora.values();
        Self {
            task: Task::Ge,
            model: ModelSpec::encoder(64),
            nu_z: preset.nu_z,
            sigma_x: None,
            loss: LossKind::gkl(),
            epochs: 300,
            alpha2: AlphaSchedule::constant(preset.alpha2),
            ..Self::dr()
        }
    }

    /// Relational distillation defaults.
    pub fn kd() -> Self {
        Self {
            task: Task::Kd,
            model: ModelSpec::encoder(32),
            nu_x: 100.0,
            nu_z: 100.0,
            sigma_x: Some(1.0),
            loss: LossKind::Bce,
            latent_distance: LatentDistance::OneMinusCosine,
            epochs: 200,
            ..Self::dr()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        positive("nu_x", self.nu_x)?;
        positive("nu_z", self.nu_z)?;
        positive("sigma_z", self.sigma_z)?;
        positive("base_lr", self.adam.base_lr)?;
        if let Some(s) = self.sigma_x {
            positive("sigma_x", s)?;
        }
        if !self.mu_z.is_finite() {
            return Err(Error::invalid("mu_z must be finite"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.adam.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.pair_mask_fraction) {
            return Err(Error::invalid(format!(
                "mask fraction must lie in [0, 1), got {}",
                self.pair_mask_fraction
            )));
        }
        if self.model.out_dim() == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        if self.fusion == Fusion::Dynamic {
            match &self.model {
                ModelSpec::Encoder { hidden, .. } if !hidden.is_empty() => {}
                _ => return Err(Error::invalid("dynamic fusion requires an encoder with a hidden layer")),
            }
        }
        if let LossKind::Gkl { gamma } = self.loss {
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
            }
        }
        KernelParams::with_clamp(self.nu_x, self.clamp_eps)?;
        Ok(())
    }
}

/// Per-graph defaults from the graph-embedding hyper-parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GePreset {
    Cora,
    CiteSeer,
    PubMed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GePresetValues {
    pub nu_z: f64,
    pub alpha2: f64,
}

impl GePreset {
    pub fn values(&self) -> GePresetValues {
        match self {
            GePreset::Cora => GePresetValues {
                nu_z: 0.001,
                alpha2: 1.0,
            },
            GePreset::CiteSeer => GePresetValues {
                nu_z: 0.003,
                alpha2: 0.5,
            },
            GePreset::PubMed => GePresetValues {
                nu_z: 0.003,
                alpha2: 50.0,
            },
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "cora" => Ok(GePreset::Cora),
            "citeseer" => Ok(GePreset::CiteSeer),
            "pubmed" => Ok(GePreset::PubMed),
            other => Err(Error::invalid(format!("unknown graph preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub beta: f64,
    pub effective_lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// `epoch,loss,beta,effective_lr` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,beta,effective_lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.loss, r.beta, r.effective_lr);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: EmbeddingModel,
    pub log: TrainingLog,
}

/// One batch worth of training signal, exposed for gradient checks.
pub(crate) struct BatchOutcome {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

pub(crate) struct BatchContext<'a> {
    pub spec: &'a TaskSpec,
    pub x: &'a DataMatrix,
    pub parts: &'a [(&'a SimilarityMatrix, AlphaSchedule)],
    pub kernel_x: KernelParams,
    pub kernel_z: KernelParams,
    pub latent_stats: NormalizationStats,
}

impl BatchContext<'_> {
    pub fn run(
        &self,
        model: &EmbeddingModel,
        idx: &[usize],
        step_fraction: f64,
        keep: Option<&Array2<bool>>,
    ) -> Result<BatchOutcome> {
        let eps = self.spec.clamp_eps;
        let mut px = static_fuse_block(self.parts, idx, step_fraction, eps);
        let pass = model.forward_batch(self.x.values(), idx)?;
        if self.spec.fusion == Fusion::Dynamic {
            // Tap similarities are computed from values only: a constant target.
            let p_int = activation_similarity(
                pass.intermediate.view(),
                self.spec.latent_distance,
                self.spec.calibration_neighbors,
                &self.kernel_x,
            );
            px = dynamic_fuse_raw(px.view(), p_int.view(), 1.0 - step_fraction, eps)?;
        }
        let fwd = latent_forward(
            pass.z.view(),
            self.spec.latent_distance,
            &self.latent_stats,
            &self.kernel_z,
        );
        let mut loss = evaluate(self.spec.loss, px.view(), fwd.pz.view(), keep.map(|k| k.view()))?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        mask_clamped(&mut loss.grad_wrt_latent, fwd.clamped.view());
        let grads = backprop_through_similarity(
            model,
            &pass,
            idx,
            loss.grad_wrt_latent.view(),
            &fwd,
            self.spec.latent_distance,
            &self.latent_stats,
            &self.kernel_z,
        );
        Ok(BatchOutcome {
            loss: loss.value,
            grads,
        })
    }
}

impl<'a> BatchContext<'a> {
    fn new(spec: &'a TaskSpec, x: &'a DataMatrix, parts: &'a [(&'a SimilarityMatrix, AlphaSchedule)]) -> Result<Self> {
        Ok(BatchContext {
            spec,
            x,
            parts,
            kernel_x: KernelParams::with_clamp(spec.nu_x, spec.clamp_eps)?,
            kernel_z: KernelParams::with_clamp(spec.nu_z, spec.clamp_eps)?,
            latent_stats: NormalizationStats::identity(0).with_latent(spec.mu_z, spec.sigma_z)?,
        })
    }
}

/// Loss value and parameter gradients of one batch exactly as [`fit`]
/// computes them, with `model` left untouched.
pub fn batch_objective(
    spec: &TaskSpec,
    x: &DataMatrix,
    targets: &[(SimilarityMatrix, AlphaSchedule)],
    model: &EmbeddingModel,
    idx: &[usize],
    step_fraction: f64,
    keep: Option<&Array2<bool>>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    spec.validate()?;
    let parts: Vec<(&SimilarityMatrix, AlphaSchedule)> = targets.iter().map(|(p, a)| (p, *a)).collect();
    let out = BatchContext::new(spec, x, &parts)?.run(model, idx, step_fraction, keep)?;
    Ok((out.loss, out.grads))
}

fn pair_mask(b: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Array2<bool> {
    Array2::from_shape_fn((b, b), |(i, j)| i != j && rng.random::<f64>() >= fraction)
}

/// Mini-batch Adam against the (fused) target similarities.
///
/// `targets` holds one similarity matrix per graph with its weight schedule;
/// every matrix must cover all rows of `x`.
pub fn fit(spec: &TaskSpec, x: &DataMatrix, targets: &[(SimilarityMatrix, AlphaSchedule)]) -> Result<FitOutput> {
    spec.validate()?;
    let n = x.n_rows();
    if targets.is_empty() {
        return Err(Error::invalid("fit needs at least one target similarity"));
    }
    if let Some((p, _)) = targets.iter().find(|(p, _)| p.n() != n) {
        return Err(Error::invalid(format!("target covers {} rows, data has {n}", p.n())));
    }
    let parts: Vec<(&SimilarityMatrix, AlphaSchedule)> = targets.iter().map(|(p, a)| (p, *a)).collect();
    let ctx = BatchContext::new(spec, x, &parts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ MASK_STREAM);
    let mut model = spec.model.build(n, x.n_cols(), &mut rng)?;

    let batch = spec.adam.batch_size.min(n);
    let adam = AdamConfig {
        batch_size: batch,
        ..spec.adam
    };
    let mut opt = OptimizerState::new(adam);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = spec.epochs * steps_per_epoch;
    let mut global_step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut beta = 1.0;
        for idx in order.chunks(batch) {
            let step_fraction = if total_steps > 1 {
                global_step as f64 / (total_steps - 1) as f64
            } else {
                0.0
            };
            global_step += 1;
            if idx.len() < 2 {
                continue;
            }
            beta = 1.0 - step_fraction;
            let keep =
                (spec.pair_mask_fraction > 0.0).then(|| pair_mask(idx.len(), spec.pair_mask_fraction, &mut mask_rng));
            let out = ctx.run(&model, idx, step_fraction, keep.as_ref())?;
            opt.step(model.blocks_mut(), &out.grads)?;
            epoch_loss += out.loss;
            batches += 1;
        }
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: epoch_loss / batches.max(1) as f64,
            beta: if spec.fusion == Fusion::Dynamic { beta } else { 1.0 },
            effective_lr: adam.effective_lr(),
        });
    }
    Ok(FitOutput { model, log })
}
