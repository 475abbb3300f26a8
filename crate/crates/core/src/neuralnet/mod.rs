//! Per-cluster regression networks and their training.

mod kfold;
mod mlp;
mod regional;
mod scaler;
mod train;

pub use kfold::{kfold_indices, kfold_select, Candidate, Selection};
pub use mlp::{gradients, loss, weighted_mse, Mlp, TrainingSet};
pub use regional::{fit_regional, ArchitecturePolicy, ClusterFit, FittedModel, RegionalModel};
pub use scaler::{scaler_fit_transform, Scaler};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
