//! MLP training harness: data loading, the model, training runs and the
//! estimation-object comparison.

pub mod data;
pub mod estimate;
pub mod mlp;
pub mod train;

pub use data::{load_idx, load_mnist, mnist_paths, synth_gaussian, CovarianceRecipe, Dataset};
pub use estimate::{estimate_cell, estimate_csv, estimation_compare, mean_difference, EstimateConfig, EstimateRow};
pub use mlp::{Evaluation, Linear, Mlp, MlpConfig, MlpGrads, Tape};
pub use train::{config_digest, train_mlp, EpochRecord, StatRecording, TrainLog, TrainOptions, TrainOutput};
