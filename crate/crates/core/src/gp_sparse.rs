//! Inducing-point (low-rank) GP regression.
//!
//! Batch training maximizes the collapsed variational lower bound
//!
//! ```text
//! F = log N(y | 0, Q + σ²I) - tr(K_nn - Q) / (2σ²),   Q = K_nm K_mm⁻¹ K_mn
//! ```
//!
//! in O(nm²) time. Fitting streams the rows in blocks and needs O(m²)
//! memory beyond the data; the hyperparameter gradient keeps `K_nm` and so
//! needs O(nm). Stochastic training keeps an explicit
//! Gaussian `q(v) = N(mean, L Lᵀ)` over whitened inducing outputs
//! `v = L_m⁻¹ u` and runs plain gradient ascent on unbiased minibatch
//! estimates of the uncollapsed bound, so each step costs O(b m² + m³)
//! independent of `n`.
//!
//! Both modes end in the same representation: the whitened posterior
//! `(mean, cov)` over `v`, from which predictions cost O(m²) per point.
//!
//! The diagonal jitter of `K_mm` is treated as a nugget of the latent
//! covariance on training inputs: it is also added to `K_nn` and to the
//! entries of `K_nm` whose training and inducing inputs coincide. With
//! `Z = X` this makes the bound and the predictions coincide with the exact
//! model, which carries the same jitter on its diagonal.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster;
use crate::error::{Error, Result};
use crate::gp_exact::{check_noise, check_training_data};
use crate::kernels::{self, KernelSpec};
use crate::linalg::{cholesky_escalating, cholesky_with_jitter, select_rows, JitteredCholesky, JITTER_ESCALATION};
use crate::Regressor;

const PREDICT_BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducingStrategy {
    RandomSubset,
    KMeansCentroids,
}

impl InducingStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" | "random_subset" => Ok(InducingStrategy::RandomSubset),
            "kmeans" | "kmeans_centroids" | "k-means" => Ok(InducingStrategy::KMeansCentroids),
            other => Err(Error::config("inducing_strategy", format!("unknown strategy `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InducingStrategy::RandomSubset => "random",
            InducingStrategy::KMeansCentroids => "kmeans",
        }
    }
}

/// `min(512, n / 10)`, at least 1.
pub fn default_inducing_count(n: usize) -> usize {
    (n / 10).clamp(1, 512).min(n.max(1))
}

#[derive(Clone, Debug)]
pub struct SparseGPModel {
    pub(crate) inducing_inputs: DMatrix<f64>,
    pub(crate) kernel: KernelSpec,
    pub(crate) noise_variance: f64,
    pub(crate) kmm_factor: JitteredCholesky,
    /// Mean of q(v), v = L_m⁻¹ u.
    pub(crate) whitened_mean: DVector<f64>,
    /// Covariance of q(v).
    pub(crate) whitened_cov: DMatrix<f64>,
    pub(crate) bound_value: f64,
}

impl SparseGPModel {
    pub fn inducing_inputs(&self) -> &DMatrix<f64> {
        &self.inducing_inputs
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn bound_value(&self) -> f64 {
        self.bound_value
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing_inputs.nrows()
    }

    pub fn jitter_multiplier(&self) -> f64 {
        self.kmm_factor.multiplier
    }

    /// Sufficient statistics of the whitened inducing posterior `(mean, cov)`.
    pub fn inducing_stats(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.whitened_mean, &self.whitened_cov)
    }

    /// Rebuilds a model from stored statistics (used by deserialization).
    pub fn from_parts(
        inducing_inputs: DMatrix<f64>,
        kernel: KernelSpec,
        noise_variance: f64,
        jitter_multiplier: f64,
        whitened_mean: DVector<f64>,
        whitened_cov: DMatrix<f64>,
        bound_value: f64,
    ) -> Result<Self> {
        kernel.validate()?;
        check_noise(noise_variance)?;
        let m = inducing_inputs.nrows();
        if inducing_inputs.ncols() != kernel.input_dim() || whitened_mean.len() != m || whitened_cov.shape() != (m, m) {
            return Err(Error::dim("inconsistent sparse model statistics"));
        }
        let start = JITTER_ESCALATION.iter().position(|&v| v == jitter_multiplier).unwrap_or(0);
        let kmm = kernels::gram(&kernel, &inducing_inputs);
        let kmm_factor = cholesky_escalating(&kmm, kernel.jitter(), &JITTER_ESCALATION[start..])?;
        Ok(Self {
            inducing_inputs,
            kernel,
            noise_variance,
            kmm_factor,
            whitened_mean,
            whitened_cov,
            bound_value,
        })
    }
}

/// Chooses `m` inducing inputs from the rows of `x`.
///
/// `RandomSubset` samples rows without replacement; `KMeansCentroids` runs
/// seeded k-means with a fixed iteration cap. Both are deterministic given
/// `seed`.
pub fn select_inducing(x: &DMatrix<f64>, m: usize, strategy: InducingStrategy, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("need 1 <= m <= n for inducing inputs, got m={m}, n={n}")));
    }
    match strategy {
        InducingStrategy::RandomSubset => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = index::sample(&mut rng, n, m).into_vec();
            Ok(select_rows(x, &idx))
        }
        InducingStrategy::KMeansCentroids => Ok(cluster::kmeans(x, m, seed)?.centroids),
    }
}

fn row_key(x: &DMatrix<f64>, i: usize) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, so normalize before hashing bits
    x.row(i).iter().map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

/// For each training row, the inducing rows with identical coordinates.
fn coincidences(x: &DMatrix<f64>, z: &DMatrix<f64>) -> HashMap<usize, Vec<usize>> {
    let mut by_key: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for j in 0..z.nrows() {
        by_key.entry(row_key(z, j)).or_default().push(j);
    }
    let mut out = HashMap::new();
    for i in 0..x.nrows() {
        if let Some(js) = by_key.get(&row_key(x, i)) {
            out.insert(i, js.clone());
        }
    }
    out
}

fn check_inducing(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    if z.ncols() != x.ncols() {
        return Err(Error::dim(format!(
            "inducing inputs have {} columns, training inputs {}",
            z.ncols(),
            x.ncols()
        )));
    }
    if z.nrows() == 0 || z.nrows() > x.nrows() {
        return Err(Error::invalid(format!(
            "need 1 <= m <= n inducing inputs, got m={}, n={}",
            z.nrows(),
            x.nrows()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("inducing inputs must be finite"));
    }
    Ok(())
}

/// Quantities shared by the collapsed bound, its gradient and the fit.
struct Collapsed {
    lm: JitteredCholesky,
    knm: DMatrix<f64>,
    /// L_m⁻¹ K_mn / σ
    a: DMatrix<f64>,
    lb: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// LB⁻¹ A y / σ
    c: DVector<f64>,
    bound: f64,
    jitter: f64,
    pairs: HashMap<usize, Vec<usize>>,
}

fn collapsed(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
) -> Result<Collapsed> {
    check_training_data(x, y, kernel)?;
    check_noise(noise_variance)?;
    check_inducing(x, z)?;
    let n = x.nrows();
    let sigma = noise_variance.sqrt();

    let kmm = kernels::gram(kernel, z);
    let lm = cholesky_with_jitter(&kmm, kernel.jitter())?;
    let jitter = lm.jitter;

    let mut knm = kernels::cross_matrix(kernel, x, z);
    let pairs = coincidences(x, z);
    for (&i, js) in &pairs {
        for &j in js {
            knm[(i, j)] += jitter;
        }
    }
    let mut a = lm.solve_lower(&knm.transpose());
    a /= sigma;
    let aat = &a * a.transpose();
    let ay = &a * y / sigma;
    let trace_aat = a.norm_squared();
    let (lb, c, bound) = reduce(n, y, kernel, noise_variance, jitter, aat, ay, trace_aat)?;

    Ok(Collapsed {
        lm,
        knm,
        a,
        lb,
        c,
        bound,
        jitter,
        pairs,
    })
}

/// Cholesky of `B = I + AAᵀ`, `c = L_B⁻¹ A y / σ` and the bound from the
/// accumulated `AAᵀ`, `A y / σ` and `tr(AAᵀ)`.
#[allow(clippy::too_many_arguments)]
fn reduce(
    n: usize,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    jitter: f64,
    mut b: DMatrix<f64>,
    ay: DVector<f64>,
    trace_aat: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>, f64)> {
    for i in 0..b.nrows() {
        b[(i, i)] += 1.0;
    }
    let lb = nalgebra::Cholesky::new(b).ok_or_else(|| Error::Factorization { jitter_levels: vec![0.0] })?;
    let c = lb
        .l_dirty()
        .solve_lower_triangular(&ay)
        .ok_or_else(|| Error::Factorization { jitter_levels: vec![0.0] })?;
    let nf = n as f64;
    let log_det_b_half: f64 = lb.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let trace_knn = nf * (kernel.total_signal_variance() + jitter);
    let bound = -0.5 * nf * (2.0 * PI).ln() - log_det_b_half - 0.5 * nf * noise_variance.ln()
        - 0.5 * y.norm_squared() / noise_variance
        + 0.5 * c.norm_squared()
        - 0.5 * trace_knn / noise_variance
        + 0.5 * trace_aat;
    Ok((lb, c, bound))
}

/// Rows of `X` processed per block when only the bound and the optimal
/// `q(v)` are needed; keeps the working set in cache and memory at O(bm).
const STREAM_BLOCK: usize = 1024;

struct Streamed {
    lm: JitteredCholesky,
    lb: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    c: DVector<f64>,
    bound: f64,
}

/// Same statistics as [`collapsed`] without materializing `K_nm`.
fn streamed(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
) -> Result<Streamed> {
    check_training_data(x, y, kernel)?;
    check_noise(noise_variance)?;
    check_inducing(x, z)?;
    let n = x.nrows();
    let m = z.nrows();
    let sigma = noise_variance.sqrt();
    let lm = cholesky_with_jitter(&kernels::gram(kernel, z), kernel.jitter())?;
    let jitter = lm.jitter;
    let pairs = coincidences(x, z);
    let mut aat = DMatrix::<f64>::zeros(m, m);
    let mut ay = DVector::<f64>::zeros(m);
    let mut trace_aat = 0.0;
    let mut start = 0;
    while start < n {
        let len = STREAM_BLOCK.min(n - start);
        let block = x.rows(start, len).clone_owned();
        // m x len
        let mut kmb = kernels::cross_matrix(kernel, z, &block);
        for i in start..start + len {
            if let Some(js) = pairs.get(&i) {
                for &j in js {
                    kmb[(j, i - start)] += jitter;
                }
            }
        }
        let mut ab = lm.solve_lower(&kmb);
        ab /= sigma;
        aat.gemm(1.0, &ab, &ab.transpose(), 1.0);
        ay.gemv(1.0 / sigma, &ab, &y.rows(start, len), 1.0);
        trace_aat += ab.norm_squared();
        start += len;
    }
    let (lb, c, bound) = reduce(n, y, kernel, noise_variance, jitter, aat, ay, trace_aat)?;
    Ok(Streamed { lm, lb, c, bound })
}

/// Batch fit at fixed hyperparameters: evaluates the collapsed bound and
/// stores the optimal inducing posterior.
pub fn fit_sparse(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
) -> Result<SparseGPModel> {
    let col = streamed(x, y, kernel, noise_variance, z)?;
    let m = z.nrows();
    // q(v) = N(B⁻¹ A y / σ, B⁻¹)
    let lbt = col.lb.l_dirty().transpose();
    let whitened_mean = lbt
        .solve_upper_triangular(&col.c)
        .ok_or_else(|| Error::Factorization { jitter_levels: vec![0.0] })?;
    let whitened_cov = col.lb.inverse();
    debug_assert_eq!(whitened_cov.shape(), (m, m));
    Ok(SparseGPModel {
        inducing_inputs: z.clone(),
        kernel: kernel.clone(),
        noise_variance,
        kmm_factor: col.lm,
        whitened_mean,
        whitened_cov,
        bound_value: col.bound,
    })
}

/// Collapsed bound value only.
pub fn collapsed_bound(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
) -> Result<f64> {
    Ok(streamed(x, y, kernel, noise_variance, z)?.bound)
}

/// Collapsed bound and its gradient with respect to the kernel's
/// log-hyperparameters followed by `ln σ²`, inducing inputs held fixed.
pub fn collapsed_bound_gradients(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>)> {
    let col = collapsed(x, y, kernel, noise_variance, z)?;
    let n = x.nrows();
    let m = z.nrows();
    let s2 = noise_variance;
    let sigma = s2.sqrt();

    let lm_l = col.lm.chol.l_dirty();
    let lb_l = col.lb.l_dirty();
    let b_inv = col.lb.inverse();
    // m_w = B⁻¹ A y / σ, u = L_m⁻ᵀ m_w = S⁻¹ K_mn y
    let mw = lb_l
        .transpose()
        .solve_upper_triangular(&col.c)
        .expect("positive diagonal");
    let u = lm_l.transpose().solve_upper_triangular(&mw).expect("positive diagonal");
    // β = (y - K_nm u) / σ²
    let beta = (y - &col.knm * &u) / s2;
    let lm_inv = lm_l
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .expect("positive diagonal");

    // W_nm = β uᵀ + Aᵀ (I - B⁻¹) L_m⁻¹ / σ
    let mut i_minus_binv = -b_inv.clone();
    for i in 0..m {
        i_minus_binv[(i, i)] += 1.0;
    }
    let p = &i_minus_binv * &lm_inv;
    let mut w_nm = col.a.transpose() * &p / sigma;
    w_nm.ger(1.0, &beta, &u, 1.0);

    // W_mm = -½ u uᵀ + ½ L_m⁻ᵀ (2I - B - B⁻¹) L_m⁻¹
    let aat = &col.a * col.a.transpose();
    let mut inner = -(&aat) - &b_inv;
    for i in 0..m {
        // 2I - (I + AAᵀ) - B⁻¹ = I - AAᵀ - B⁻¹
        inner[(i, i)] += 1.0;
    }
    let mut w_mm = lm_inv.transpose() * inner * &lm_inv * 0.5;
    w_mm.ger(-0.5, &u, &u, 1.0);

    let np = kernel.num_params();
    let g_nm = kernels::gradient_contraction(kernel, x, z, &w_nm)?;
    let g_mm = kernels::gradient_contraction(kernel, z, z, &w_mm)?;
    // k(x, x) is the same for every x, so the diagonal term needs one point
    let mut g_diag = vec![0.0; np];
    let x0: Vec<f64> = x.row(0).iter().copied().collect();
    kernel.accumulate_gradient(&x0, &x0, 1.0, &mut g_diag);

    let jit_grad = kernels::jitter_gradient(kernel, col.lm.multiplier);
    let coincident_weight: f64 = col
        .pairs
        .iter()
        .flat_map(|(&i, js)| js.iter().map(move |&j| (i, j)))
        .map(|(i, j)| w_nm[(i, j)])
        .sum();
    let trace_wmm = w_mm.trace();
    let nf = n as f64;

    let mut grad = vec![0.0; np + 1];
    for q in 0..np {
        grad[q] = g_nm[q] + g_mm[q] - nf / (2.0 * s2) * g_diag[q]
            + jit_grad[q] * (coincident_weight + trace_wmm - nf / (2.0 * s2));
    }

    // noise
    let trace_knn = nf * (kernel.total_signal_variance() + col.jitter);
    let trace_q = s2 * aat.trace();
    let trace_sigma_inv = (nf - m as f64 + b_inv.trace()) / s2;
    let d_s2 = 0.5 * (beta.norm_squared() - trace_sigma_inv) + (trace_knn - trace_q) / (2.0 * s2 * s2);
    grad[np] = d_s2 * s2;
    Ok((col.bound, grad))
}

// ---- stochastic training ---------------------------------------------------

/// Fixed pieces of the uncollapsed bound: `L_m`, inputs and coincidences.
pub struct UncollapsedProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    kernel: &'a KernelSpec,
    noise_variance: f64,
    z: &'a DMatrix<f64>,
    lm: JitteredCholesky,
    pairs: HashMap<usize, Vec<usize>>,
    /// Row-major copies so a minibatch gathers contiguous rows.
    x_rows: Vec<f64>,
    z_rows: Vec<f64>,
}

impl<'a> UncollapsedProblem<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        kernel: &'a KernelSpec,
        noise_variance: f64,
        z: &'a DMatrix<f64>,
    ) -> Result<Self> {
        check_training_data(x, y, kernel)?;
        check_noise(noise_variance)?;
        check_inducing(x, z)?;
        let kmm = kernels::gram(kernel, z);
        let lm = cholesky_with_jitter(&kmm, kernel.jitter())?;
        let pairs = coincidences(x, z);
        Ok(Self {
            x,
            y,
            kernel,
            noise_variance,
            z,
            lm,
            pairs,
            x_rows: crate::linalg::to_row_major(x),
            z_rows: crate::linalg::to_row_major(z),
        })
    }

    pub fn num_data(&self) -> usize {
        self.x.nrows()
    }

    /// `L_m⁻¹ K_m,batch` (m × b).
    fn whitened_cross(&self, batch: &[usize]) -> DMatrix<f64> {
        let m = self.z.nrows();
        let d = self.x.ncols();
        let mut kmb = DMatrix::<f64>::zeros(m, batch.len());
        for (col, &i) in batch.iter().enumerate() {
            let xi = &self.x_rows[i * d..(i + 1) * d];
            for j in 0..m {
                kmb[(j, col)] = self.kernel.eval(xi, &self.z_rows[j * d..(j + 1) * d]);
            }
            if let Some(js) = self.pairs.get(&i) {
                for &j in js {
                    kmb[(j, col)] += self.lm.jitter;
                }
            }
        }
        self.lm.solve_lower(&kmb)
    }

    fn kl(&self, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
        let m = mean.len() as f64;
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
        0.5 * (chol.norm_squared() + mean.norm_squared() - m - log_det)
    }

    /// Sum over `batch` of the per-point expected log likelihood terms.
    fn data_term(&self, batch: &[usize], a: &DMatrix<f64>, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
        let s2 = self.noise_variance;
        let kdiag = self.kernel.total_signal_variance() + self.lm.jitter;
        let la = chol.transpose() * a; // m x b
        let mut acc = 0.0;
        for (col, &i) in batch.iter().enumerate() {
            let ai = a.column(col);
            let f = ai.dot(mean);
            let r = self.y[i] - f;
            let qii = ai.norm_squared();
            let sii = la.column(col).norm_squared();
            acc += -0.5 * (2.0 * PI * s2).ln() - 0.5 * r * r / s2 - 0.5 * (kdiag - qii) / s2 - 0.5 * sii / s2;
        }
        acc
    }

    /// Uncollapsed bound over all data for `q(v) = N(mean, chol cholᵀ)`.
    pub fn bound(&self, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
        let n = self.num_data();
        let mut total = 0.0;
        let block = 2048;
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + block).min(n)).collect();
            let a = self.whitened_cross(&idx);
            total += self.data_term(&idx, &a, mean, chol);
            start += block;
        }
        total - self.kl(mean, chol)
    }

    /// Unbiased estimate `(n/b) Σ_batch terms - KL`.
    pub fn bound_estimate(&self, batch: &[usize], mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
        let a = self.whitened_cross(batch);
        let scale = self.num_data() as f64 / batch.len() as f64;
        scale * self.data_term(batch, &a, mean, chol) - self.kl(mean, chol)
    }

    /// Gradient of `estimate / n` with respect to `mean` and `chol` (lower
    /// triangle), plus the estimate itself.
    fn scaled_gradient(
        &self,
        batch: &[usize],
        mean: &DVector<f64>,
        chol: &DMatrix<f64>,
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.num_data() as f64;
        let b = batch.len() as f64;
        let s2 = self.noise_variance;
        let a = self.whitened_cross(batch);
        let estimate = n / b * self.data_term(batch, &a, mean, chol) - self.kl(mean, chol);

        let resid = DVector::from_iterator(
            batch.len(),
            batch.iter().enumerate().map(|(col, &i)| self.y[i] - a.column(col).dot(mean)),
        );
        let g_mean = &a * resid / (s2 * b) - mean / n;
        let at_l = a.transpose() * chol; // b x m
        let mut g_chol = -(&a * at_l) / (s2 * b) - chol / n;
        for i in 0..chol.nrows() {
            g_chol[(i, i)] += 1.0 / (n * chol[(i, i)]);
        }
        g_chol.fill_upper_triangle(0.0, 1);
        (estimate, g_mean, g_chol)
    }
}

/// Settings of [`fit_sparse_stochastic`].
#[derive(Clone, Copy, Debug)]
pub struct StochasticSettings {
    pub batch_size: usize,
    pub steps: usize,
    /// Step size applied to the gradient of the bound divided by `n`.
    pub learning_rate: f64,
    pub seed: u64,
}

/// Stochastic minibatch training of `q(v)` at fixed hyperparameters.
///
/// Each step draws `batch_size` rows without replacement and ascends the
/// per-datum bound estimate; the diagonal of the covariance factor is
/// updated in log space so it stays positive.
pub fn fit_sparse_stochastic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    z: &DMatrix<f64>,
    settings: StochasticSettings,
) -> Result<SparseGPModel> {
    let problem = UncollapsedProblem::new(x, y, kernel, noise_variance, z)?;
    let n = x.nrows();
    let m = z.nrows();
    if settings.batch_size == 0 || settings.batch_size > n {
        return Err(Error::invalid(format!(
            "batch size must be in 1..={n}, got {}",
            settings.batch_size
        )));
    }
    if !(settings.learning_rate.is_finite() && settings.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut mean = DVector::<f64>::zeros(m);
    let mut chol = DMatrix::<f64>::identity(m, m);
    let lr = settings.learning_rate;
    for step in 0..settings.steps {
        let batch = if settings.batch_size == n {
            (0..n).collect::<Vec<_>>()
        } else {
            index::sample(&mut rng, n, settings.batch_size).into_vec()
        };
        let (estimate, g_mean, g_chol) = problem.scaled_gradient(&batch, &mean, &chol);
        if !estimate.is_finite() || g_mean.iter().chain(g_chol.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        mean += &g_mean * lr;
        for j in 0..m {
            for i in (j + 1)..m {
                chol[(i, j)] += lr * g_chol[(i, j)];
            }
            let d = chol[(j, j)];
            chol[(j, j)] = d * (lr * d * g_chol[(j, j)]).exp();
        }
    }
    let bound_value = problem.bound(&mean, &chol);
    if !bound_value.is_finite() {
        return Err(Error::Diverged { step: settings.steps });
    }
    let whitened_cov = &chol * chol.transpose();
    Ok(SparseGPModel {
        inducing_inputs: z.clone(),
        kernel: kernel.clone(),
        noise_variance,
        kmm_factor: problem.lm,
        whitened_mean: mean,
        whitened_cov,
        bound_value,
    })
}

/// Predictive mean and noisy-observation variance.
pub fn predict_sparse(model: &SparseGPModel, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = model.inducing_inputs.ncols();
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
        let kms = kernels::cross_matrix(&model.kernel, &model.inducing_inputs, &block);
        let a = model.kmm_factor.solve_lower(&kms); // m x len
        let mu = a.transpose() * &model.whitened_mean;
        let sa = &model.whitened_cov * &a;
        for j in 0..len {
            let aj = a.column(j);
            mean[start + j] = mu[j];
            let v = prior - aj.norm_squared() + aj.dot(&sa.column(j));
            var[start + j] = v.max(0.0);
        }
        start += len;
    }
    Ok((mean, var))
}

impl Regressor for SparseGPModel {
    fn input_dim(&self) -> usize {
        self.inducing_inputs.ncols()
    }

    fn predict(&self, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        predict_sparse(self, xstar)
    }
}
