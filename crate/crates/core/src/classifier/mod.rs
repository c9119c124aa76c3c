//! Three-layer MLP failure detectors.
//!
//! `input → GELU(hidden₁) → GELU(hidden₂) → logistic(1)`, with dropout on
//! both hidden layers during training only. Inputs are standardized with a
//! per-feature shift and scale fitted on the training split and stored with
//! the model.

mod data;
mod io;
mod model;
mod train;

pub use data::{Dataset, Example};
pub use io::{load_model, load_model_checked, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{gelu, gelu_grad, Layer, MlpModel};
pub use train::{evaluate, grad_check, grad_check_detail, train, EpochStats, GradCheck, Metrics, TrainConfig, TrainReport};

/// Hidden widths used when the caller does not choose.
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];
