//! Embedding models, their optimiser and the training loop, plus the
//! end-to-end drivers for dimension reduction, graph embedding and
//! relational distillation.

pub mod adam;
pub mod backprop;
pub mod fit;
pub mod model;
pub mod tasks;

pub use adam::{AdamConfig, OptimizerState};
pub use backprop::{backprop_through_similarity, latent_backward, latent_forward, LatentForward};
pub use fit::{batch_objective, fit, EpochRecord, FitOutput, Fusion, GePreset, ModelSpec, Task, TaskSpec, TrainingLog};
pub use model::{EmbeddingModel, Encoder, ForwardPass, Layer};
pub use tasks::{graph_target, knn_target, run_dr_task, run_ge_task, run_kd_task, teacher_target, TaskOutput};
