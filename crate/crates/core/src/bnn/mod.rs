//! Sample-based Bayesian neural networks.

pub mod ensemble;
pub mod hmc;
pub mod mlp;
pub mod samples;

pub use ensemble::{ensemble_train, EnsembleConfig, EnsembleObjective};
pub use hmc::{hmc_sample, mcem_update, ChainDiagnostics, HmcConfig, LogDensity, TrainData};
pub use mlp::{log_joint_and_grad, mlp_forward, MlpArch};
pub use samples::FunctionSampleSet;
