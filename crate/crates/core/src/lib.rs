//! Gaussian-process regression for large tabular sales data.
//!
//! The crate provides exact GP regression, a collapsed variational
//! inducing-point approximation (batch and stochastic minibatch training),
//! a local-experts approximation with block-diagonal covariance, marginal
//! likelihood hyperparameter optimization with ARD relevance ranking, a
//! configuration-driven preprocessing pipeline for point-of-sale demand
//! data, and RMSLE evaluation with posterior-mean profiles.

pub mod cli;
pub mod cluster;
pub mod conf;
pub mod error;
pub mod eval_report;
pub mod gp_exact;
pub mod gp_local;
pub mod gp_sparse;
pub mod hyperopt;
pub mod kernels;
pub mod linalg;
pub mod model_io;
pub mod pipeline;

pub use error::{Error, Result};
pub use eval_report::{EvalReport, PosteriorProfile};
pub use gp_exact::ExactGPModel;
pub use gp_local::{LocalGPModel, PredictionMode};
pub use gp_sparse::{InducingStrategy, SparseGPModel};
pub use hyperopt::{ModelFamily, OptimizationTrace, RelevanceRanking};
pub use kernels::{GramMatrix, KernelKind, KernelSpec};
pub use model_io::GpModel;

use nalgebra::{DMatrix, DVector};

/// Common prediction interface of the fitted regressors.
pub trait Regressor {
    /// Input dimension the model was trained on.
    fn input_dim(&self) -> usize;

    /// Predictive mean and variance (of a noisy observation) at each row of `xstar`.
    fn predict(&self, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)>;
}
