//! Exact Gaussian-process regression with a zero prior mean.
//!
//! Training covariance is `K + jitter * I + noise_variance * I`, factorized
//! once at fit time. Predictions return the mean and the variance of a
//! noisy observation, `k(x*, x*) + noise_variance - k*ᵀ (K + ...)⁻¹ k*`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec};
use crate::linalg::{cholesky_escalating, JitteredCholesky, JITTER_ESCALATION};
use crate::Regressor;

const PREDICT_BLOCK: usize = 2048;

#[derive(Clone, Debug)]
pub struct ExactGPModel {
    pub(crate) train_inputs: DMatrix<f64>,
    pub(crate) train_targets: DVector<f64>,
    pub(crate) kernel: KernelSpec,
    pub(crate) noise_variance: f64,
    pub(crate) factor: JitteredCholesky,
    pub(crate) alpha: DVector<f64>,
}

pub(crate) fn check_training_data(x: &DMatrix<f64>, y: &DVector<f64>, kernel: &KernelSpec) -> Result<()> {
    kernel.validate()?;
    if x.nrows() == 0 {
        return Err(Error::invalid("need at least one training point"));
    }
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("{} input rows but {} targets", x.nrows(), y.len())));
    }
    if x.ncols() != kernel.input_dim() {
        return Err(Error::dim(format!(
            "inputs have {} columns, kernel expects {}",
            x.ncols(),
            kernel.input_dim()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains null or non-finite values"));
    }
    Ok(())
}

pub(crate) fn check_noise(noise_variance: f64) -> Result<()> {
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    Ok(())
}

/// Fits an exact GP, caching the Cholesky factor and `alpha = (K + σ²I)⁻¹ y`.
pub fn fit_exact(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
) -> Result<ExactGPModel> {
    fit_with_escalation(x, y, kernel, noise_variance, &JITTER_ESCALATION)
}

pub(crate) fn fit_with_escalation(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    multipliers: &[f64],
) -> Result<ExactGPModel> {
    check_training_data(x, y, kernel)?;
    check_noise(noise_variance)?;
    let mut k = kernels::gram(kernel, x);
    for i in 0..k.nrows() {
        k[(i, i)] += noise_variance;
    }
    let factor = cholesky_escalating(&k, kernel.jitter(), multipliers)?;
    let alpha = factor.solve_vec(y);
    Ok(ExactGPModel {
        train_inputs: x.clone(),
        train_targets: y.clone(),
        kernel: kernel.clone(),
        noise_variance,
        factor,
        alpha,
    })
}

impl ExactGPModel {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + jitter I + σ² I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    /// Absolute diagonal jitter included in the factorized matrix.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn jitter_multiplier(&self) -> f64 {
        self.factor.multiplier
    }

    pub fn num_train(&self) -> usize {
        self.train_inputs.nrows()
    }

    /// Number of log-hyperparameters (kernel parameters plus noise).
    pub fn num_params(&self) -> usize {
        self.kernel.num_params() + 1
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        log_marginal_likelihood(self)
    }
}

/// Posterior mean and noisy-observation variance at the rows of `xstar`.
pub fn predict_exact(model: &ExactGPModel, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = model.train_inputs.ncols();
    if xstar.ncols() != d {
        return Err(Error::dim(format!("test inputs have {} columns, model expects {d}", xstar.ncols())));
    }
    let q = xstar.nrows();
    let prior = model.kernel.total_signal_variance() + model.noise_variance;
    let mut mean = DVector::zeros(q);
    let mut var = DVector::zeros(q);
    let mut start = 0;
    while start < q {
        let len = PREDICT_BLOCK.min(q - start);
        let block = xstar.rows(start, len).clone_owned();
        // n x len
        let kstar = kernels::cross_matrix(&model.kernel, &model.train_inputs, &block);
        let mu = kstar.transpose() * &model.alpha;
        let v = model.factor.solve_lower(&kstar);
        for j in 0..len {
            mean[start + j] = mu[j];
            let reduction = v.column(j).norm_squared();
            var[start + j] = (prior - reduction).max(0.0);
        }
        start += len;
    }
    Ok((mean, var))
}

/// `-½ yᵀα - ½ log|K + σ²I| - (n/2) log 2π`.
pub fn log_marginal_likelihood(model: &ExactGPModel) -> f64 {
    let n = model.num_train() as f64;
    let data_fit = -0.5 * model.train_targets.dot(&model.alpha);
    let log_det_half: f64 = model.factor.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    data_fit - log_det_half - 0.5 * n * (2.0 * PI).ln()
}

/// Gradient of the log marginal likelihood with respect to the kernel's
/// log-hyperparameters followed by `ln σ²`.
pub fn lml_gradients(model: &ExactGPModel) -> Vec<f64> {
    // W = ααᵀ - (K + σ²I)⁻¹
    let mut w = model.factor.inverse();
    w.neg_mut();
    w.ger(1.0, &model.alpha, &model.alpha, 1.0);
    let trace_w = w.trace();
    let mut grad = kernels::gradient_contraction(&model.kernel, &model.train_inputs, &model.train_inputs, &w)
        .expect("dimensions checked at fit time");
    for g in grad.iter_mut() {
        *g *= 0.5;
    }
    let jitter_grad = kernels::jitter_gradient(&model.kernel, model.factor.multiplier);
    for (g, j) in grad.iter_mut().zip(jitter_grad) {
        *g += 0.5 * trace_w * j;
    }
    grad.push(0.5 * trace_w * model.noise_variance);
    grad
}

impl Regressor for ExactGPModel {
    fn input_dim(&self) -> usize {
        self.train_inputs.ncols()
    }

    fn predict(&self, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        predict_exact(self, xstar)
    }
}
