use ndarray::Array2;

use super::fit::{fit, Task, TaskSpec, TrainingLog};
use super::model::EmbeddingModel;
use crate::error::{Error, Result};
use crate::similarity::{
    calibrate_normalization, similarity_from_distances, CalibrationMode, KernelParams, SimilarityMatrix,
};
use crate::structure::{
    all_pairs_geodesic_with, build_knn_graph, graph_from_edge_list, pairwise_distances, AlphaSchedule, DataMatrix,
    DistanceMatrix, GeodesicOptions, Metric, WeightMode,
};

#[derive(Debug, Clone)]
pub struct TaskOutput {
    /// One row per input sample.
    pub embedding: Array2<f64>,
    pub model: EmbeddingModel,
    pub log: TrainingLog,
}

fn expect_task(spec: &TaskSpec, task: Task) -> Result<()> {
    if spec.task != task {
        return Err(Error::invalid(format!(
            "settings are for task {}, expected {}",
            spec.task.name(),
            task.name()
        )));
    }
    Ok(())
}

fn target_from_distances(d: &DistanceMatrix, spec: &TaskSpec, mode: CalibrationMode) -> Result<SimilarityMatrix> {
    let kernel = KernelParams::with_clamp(spec.nu_x, spec.clamp_eps)?;
    let k = spec.calibration_neighbors.min(d.n() - 1);
    let mut stats = calibrate_normalization(d, k, mode, &kernel)?;
    if let Some(sigma) = spec.sigma_x {
        stats = stats.with_sigma(sigma)?;
    }
    similarity_from_distances(d, &stats, &kernel)
}

fn geodesic_options(spec: &TaskSpec) -> GeodesicOptions {
    GeodesicOptions {
        fill_override: None,
        hop_limit: spec.hop_limit,
    }
}

/// Target similarities of a feature kNN graph.
pub fn knn_target(x: &DataMatrix, k: usize, spec: &TaskSpec, mode: CalibrationMode) -> Result<SimilarityMatrix> {
    let g = build_knn_graph(x, k, Metric::Euclidean)?;
    let d = all_pairs_geodesic_with(&g, &geodesic_options(spec))?;
    target_from_distances(&d, spec, mode)
}

/// Target similarities of a predefined graph weighted by feature distance.
pub fn graph_target(x: &DataMatrix, edges: &[(usize, usize)], spec: &TaskSpec) -> Result<SimilarityMatrix> {
    let g = graph_from_edge_list(x.n_rows(), edges, WeightMode::FeatureDistance(x))?;
    let d = all_pairs_geodesic_with(&g, &geodesic_options(spec))?;
    target_from_distances(&d, spec, CalibrationMode::Statistic)
}

/// Teacher targets: `1 − cos` between teacher rows, no graph step.
pub fn teacher_target(teacher: &DataMatrix, spec: &TaskSpec) -> Result<SimilarityMatrix> {
    let d = pairwise_distances(teacher, Metric::Cosine);
    target_from_distances(&d, spec, CalibrationMode::Statistic)
}

fn finish(spec: &TaskSpec, x: &DataMatrix, targets: &[(SimilarityMatrix, AlphaSchedule)]) -> Result<TaskOutput> {
    let out = fit(spec, x, targets)?;
    let embedding = out.model.embed(x.values())?;
    Ok(TaskOutput {
        embedding,
        model: out.model,
        log: out.log,
    })
}

/// kNN graph → geodesic distances → calibrated similarities → fit.
pub fn run_dr_task(x: &DataMatrix, k: usize, spec: &TaskSpec) -> Result<TaskOutput> {
    expect_task(spec, Task::Dr)?;
    spec.validate()?;
    let target = knn_target(x, k, spec, CalibrationMode::Statistic)?;
    finish(spec, x, &[(target, AlphaSchedule::constant(1.0))])
}

/// Graph part (weight 1) fused with a feature kNN part weighted by
/// `spec.alpha2`. With `edges = None` only the feature part is used, at
/// weight 1.
pub fn run_ge_task(x: &DataMatrix, edges: Option<&[(usize, usize)]>, spec: &TaskSpec) -> Result<TaskOutput> {
    expect_task(spec, Task::Ge)?;
    spec.validate()?;
    let k = spec.knn_k;
    let mut targets = Vec::with_capacity(2);
    match edges {
        Some(edges) => {
            targets.push((graph_target(x, edges, spec)?, AlphaSchedule::constant(1.0)));
            if spec.alpha2.initial > 0.0 || spec.alpha2.last > 0.0 {
                targets.push((knn_target(x, k, spec, CalibrationMode::BinarySearch)?, spec.alpha2));
            }
        }
        None => targets.push((
            knn_target(x, k, spec, CalibrationMode::BinarySearch)?,
            AlphaSchedule::constant(1.0),
        )),
    }
    finish(spec, x, &targets)
}

/// Student encoder on `x` trained to reproduce the teacher's cosine structure.
pub fn run_kd_task(x: &DataMatrix, teacher: &DataMatrix, spec: &TaskSpec) -> Result<TaskOutput> {
    expect_task(spec, Task::Kd)?;
    spec.validate()?;
    if x.n_rows() != teacher.n_rows() {
        return Err(Error::invalid(format!(
            "student input has {} rows, teacher features have {}",
            x.n_rows(),
            teacher.n_rows()
        )));
    }
    let target = teacher_target(teacher, spec)?;
    finish(spec, x, &[(target, AlphaSchedule::constant(1.0))])
}
