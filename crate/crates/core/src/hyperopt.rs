//! Hyperparameter fitting by quasi-Newton ascent on the log marginal
//! likelihood (or the sparse bound), and ARD relevance ranking.
//!
//! All parameters live in log space: the kernel's `log_params()` followed by
//! `ln σ²`. Gradients come from the same routines the models expose, so
//! finite-difference checks of those routines cover the optimizer too.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp_exact::{fit_exact, lml_gradients};
use crate::gp_local::{partition_inputs, Partition};
use crate::gp_sparse::collapsed_bound_gradients;
use crate::kernels::KernelSpec;
use crate::linalg::{select_entries, select_rows};

/// Log-parameters are kept inside this box; outside it the objective is
/// treated as `-inf` so the line search backs off.
const LOG_PARAM_LIMIT: f64 = 25.0;
const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Standard deviation of the log-space perturbation applied to restarts
/// after the first.
const RESTART_SPREAD: f64 = 0.5;

/// Which objective is maximized.
#[derive(Clone, Debug)]
pub enum ModelFamily {
    /// Exact log marginal likelihood.
    Exact,
    /// Collapsed variational bound with fixed inducing inputs.
    Sparse { inducing: DMatrix<f64> },
    /// Sum of per-region exact log marginal likelihoods over a fixed
    /// k-means partition.
    Local { regions: usize, seed: u64 },
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Exact => "exact",
            ModelFamily::Sparse { .. } => "sparse",
            ModelFamily::Local { .. } => "local",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-5,
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizationTrace {
    /// Objective at the start and after every accepted step.
    pub objective_values: Vec<f64>,
    pub parameter_snapshots: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl OptimizationTrace {
    /// Two-column table `iteration,objective` with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (i, v) in self.objective_values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FittedHyperparameters {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub objective: f64,
}

/// Typical starting point: unit lengthscales, signal variance `var(y)` and
/// noise `0.1 var(y)`.
pub fn default_initialization(kind: crate::kernels::KernelKind, dim: usize, y: &DVector<f64>) -> Result<(KernelSpec, f64)> {
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("empty target vector"));
    }
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let var = if var > 0.0 && var.is_finite() { var } else { 1.0 };
    Ok((KernelSpec::with_defaults(kind, dim, var)?, 0.1 * var))
}

/// Objective and gradient in log-parameter space.
struct Objective<'a> {
    family: &'a ModelFamily,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    template: &'a KernelSpec,
    partition: Option<Partition>,
}

impl Objective<'_> {
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.iter().any(|v| !v.is_finite() || v.abs() > LOG_PARAM_LIMIT) {
            return Err(Error::invalid("log-parameters out of range"));
        }
        let np = self.template.num_params();
        let kernel = self.template.with_log_params(&theta[..np])?;
        let noise = theta[np].exp();
        let (value, grad) = match self.family {
            ModelFamily::Exact => {
                let m = fit_exact(self.x, self.y, &kernel, noise)?;
                (m.log_marginal_likelihood(), lml_gradients(&m))
            }
            ModelFamily::Sparse { inducing } => collapsed_bound_gradients(self.x, self.y, &kernel, noise, inducing)?,
            ModelFamily::Local { .. } => {
                let members = self.partition.as_ref().expect("partition built").members();
                let parts = members
                    .par_iter()
                    .enumerate()
                    .map(|(r, idx)| {
                        let m = fit_exact(&select_rows(self.x, idx), &select_entries(self.y, idx), &kernel, noise)
                            .map_err(|e| Error::Region {
                                region: r,
                                source: Box::new(e),
                            })?;
                        Ok((m.log_marginal_likelihood(), lml_gradients(&m)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut value = 0.0;
                let mut grad = vec![0.0; np + 1];
                for (v, g) in parts {
                    value += v;
                    grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                (value, grad)
            }
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("non-finite objective"));
        }
        Ok((value, grad))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// One L-BFGS ascent run from `start`.
fn ascend(obj: &Objective, start: Vec<f64>, settings: &OptimizerSettings) -> Result<(Vec<f64>, f64, OptimizationTrace)> {
    let (mut f, mut g) = obj.eval(&start)?;
    let mut theta = start;
    let mut trace = OptimizationTrace {
        objective_values: vec![f],
        parameter_snapshots: vec![theta.clone()],
        converged: false,
        iterations: 0,
    };
    // memory of (s, y, 1 / yᵀs) for the minimization of -f
    let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(LBFGS_MEMORY);
    if inf_norm(&g) < settings.tolerance {
        trace.converged = true;
        return Ok((theta, f, trace));
    }
    for iter in 0..settings.max_iters {
        trace.iterations = iter + 1;
        // descent direction for -f via the two-loop recursion on -g
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, yv, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = memory
            .last()
            .map(|(s, yv, _)| dot(s, yv) / dot(yv, yv))
            .unwrap_or_else(|| 1.0 / inf_norm(&g).max(1.0));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        // q approximates H⁻¹ ∇(-f); ascend along -q
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            memory.clear();
            dir = g.iter().map(|v| v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            if let Ok((fc, gc)) = obj.eval(&cand) {
                if fc >= f + ARMIJO_C1 * step * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no acceptable step along the current direction
            if memory.is_empty() {
                trace.converged = inf_norm(&g) < settings.tolerance.sqrt();
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        // curvature pair of the minimized function -f
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if memory.len() == LBFGS_MEMORY {
                memory.remove(0);
            }
            memory.push((s, yv, 1.0 / sy));
        }
        let change = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        trace.objective_values.push(f);
        trace.parameter_snapshots.push(theta.clone());
        if inf_norm(&g) < settings.tolerance || change.abs() < settings.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((theta, f, trace))
}

/// Maximizes the family's objective from `restarts` starting points: the
/// given initialization, then seeded log-space perturbations of it. Returns
/// the best run.
pub fn optimize_hyperparameters(
    family: &ModelFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel_init: &KernelSpec,
    noise_init: f64,
    settings: &OptimizerSettings,
) -> Result<(FittedHyperparameters, OptimizationTrace)> {
    kernel_init.validate()?;
    crate::gp_exact::check_noise(noise_init)?;
    crate::gp_exact::check_training_data(x, y, kernel_init)?;
    if settings.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if !(settings.tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let partition = match family {
        ModelFamily::Local { regions, seed } => Some(partition_inputs(x, *regions, *seed)?),
        _ => None,
    };
    let obj = Objective {
        family,
        x,
        y,
        template: kernel_init,
        partition,
    };

    let mut base = kernel_init.log_params();
    base.push(noise_init.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let normal = Normal::new(0.0, RESTART_SPREAD).expect("valid spread");
    let starts: Vec<Vec<f64>> = (0..settings.restarts)
        .map(|r| {
            if r == 0 {
                base.clone()
            } else {
                base.iter().map(|v| v + normal.sample(&mut rng)).collect()
            }
        })
        .collect();

    let runs: Vec<Result<(Vec<f64>, f64, OptimizationTrace)>> =
        starts.into_par_iter().map(|s| ascend(&obj, s, settings)).collect();

    let mut best: Option<(Vec<f64>, f64, OptimizationTrace)> = None;
    let mut traces = Vec::new();
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.1 > b.1) {
                    best = Some(r.clone());
                }
                traces.push(r.2);
            }
            Err(_) => traces.push(OptimizationTrace::default()),
        }
    }
    let Some((theta, objective, trace)) = best else {
        return Err(Error::OptimizationFailed {
            restarts: settings.restarts,
            traces,
        });
    };
    let np = kernel_init.num_params();
    Ok((
        FittedHyperparameters {
            kernel: kernel_init.with_log_params(&theta[..np])?,
            noise_variance: theta[np].exp(),
            objective,
        },
        trace,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceRanking {
    /// `(feature index, inverse lengthscale)`, most relevant first.
    pub entries: Vec<(usize, f64)>,
}

impl RelevanceRanking {
    pub fn feature_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// `rank,feature_index,feature_name,inverse_lengthscale` table.
    pub fn to_table(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("rank,feature_index,feature_name,inverse_lengthscale\n");
        for (rank, (idx, v)) in self.entries.iter().enumerate() {
            let name = names.and_then(|n| n.get(*idx)).cloned().unwrap_or_else(|| format!("x{idx}"));
            let _ = writeln!(out, "{},{idx},{name},{v}", rank + 1);
        }
        out
    }
}

/// Ranks features by inverse lengthscale, largest first, ties by index.
pub fn ard_relevance(kernel: &KernelSpec, top_k: usize) -> Result<RelevanceRanking> {
    kernel.validate()?;
    let inv = kernel.inverse_lengthscales();
    if inv.is_empty() {
        return Err(Error::invalid("kernel has no per-dimension lengthscales"));
    }
    if top_k > inv.len() {
        return Err(Error::invalid(format!("top_k = {top_k} exceeds input dimension {}", inv.len())));
    }
    let mut entries: Vec<(usize, f64)> = inv.into_iter().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(top_k);
    Ok(RelevanceRanking { entries })
}
