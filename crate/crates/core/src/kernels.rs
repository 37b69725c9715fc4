//! Covariance functions: evaluation, Gram matrices and hyperparameter
//! gradients.
//!
//! Two stationary families are provided, plus sums of them:
//!
//! * squared-exponential with ARD lengthscales,
//!   `k(x, x') = s * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2)`;
//! * additive Matérn-3/2, one 1-D term per input dimension sharing the
//!   signal variance equally,
//!   `k(x, x') = sum_d (s / D) (1 + a_d) exp(-a_d)` with `a_d = sqrt(3) |x_d - x'_d| / l_d`.
//!
//! Hyperparameters are exposed in log space. Each leaf kernel contributes
//! `[ln s, ln l_1, ..., ln l_D]` to the parameter vector; a sum concatenates
//! the vectors of its children in order.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::conf::ConfMap;
use crate::error::{Error, Result};
use crate::linalg::to_row_major;

/// Diagonal jitter added to square Gram matrices, relative to the total
/// signal variance.
pub const JITTER_FACTOR: f64 = 1e-6;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    SquaredExponentialArd,
    AdditiveMatern32,
    Sum,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::SquaredExponentialArd => "se_ard",
            KernelKind::AdditiveMatern32 => "additive_matern32",
            KernelKind::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se_ard" | "se" | "squared_exponential" | "rbf" => Ok(KernelKind::SquaredExponentialArd),
            "additive_matern32" | "matern32" | "additive_matern" => Ok(KernelKind::AdditiveMatern32),
            "sum" => Ok(KernelKind::Sum),
            other => Err(Error::config("kind", format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Declarative covariance function with its hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    SquaredExponentialArd {
        signal_variance: f64,
        lengthscales: Vec<f64>,
    },
    AdditiveMatern32 {
        signal_variance: f64,
        lengthscales: Vec<f64>,
    },
    Sum(Vec<KernelSpec>),
}

/// Dense kernel matrix plus the jitter that was added to its diagonal.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub jitter_applied: f64,
}

impl KernelSpec {
    pub fn se_ard(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = KernelSpec::SquaredExponentialArd {
            signal_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn additive_matern32(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = KernelSpec::AdditiveMatern32 {
            signal_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn sum(children: Vec<KernelSpec>) -> Result<Self> {
        let k = KernelSpec::Sum(children);
        k.validate()?;
        Ok(k)
    }

    /// Leaf kernel of the given kind with unit lengthscales.
    pub fn with_defaults(kind: KernelKind, dim: usize, signal_variance: f64) -> Result<Self> {
        match kind {
            KernelKind::SquaredExponentialArd => Self::se_ard(signal_variance, vec![1.0; dim]),
            KernelKind::AdditiveMatern32 => Self::additive_matern32(signal_variance, vec![1.0; dim]),
            KernelKind::Sum => Self::sum(vec![
                Self::se_ard(signal_variance / 2.0, vec![1.0; dim])?,
                Self::additive_matern32(signal_variance / 2.0, vec![1.0; dim])?,
            ]),
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::SquaredExponentialArd { .. } => KernelKind::SquaredExponentialArd,
            KernelSpec::AdditiveMatern32 { .. } => KernelKind::AdditiveMatern32,
            KernelSpec::Sum(_) => KernelKind::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            }
            | KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                if !(signal_variance.is_finite() && *signal_variance > 0.0) {
                    return Err(Error::invalid(format!(
                        "signal variance must be positive, got {signal_variance}"
                    )));
                }
                if lengthscales.is_empty() {
                    return Err(Error::invalid("kernel needs at least one lengthscale"));
                }
                if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                    return Err(Error::invalid(format!("lengthscales must be positive, got {l}")));
                }
                Ok(())
            }
            KernelSpec::Sum(children) => {
                let first = children
                    .first()
                    .ok_or_else(|| Error::invalid("sum kernel needs at least one child"))?;
                let dim = first.input_dim();
                for c in children {
                    c.validate()?;
                    if c.input_dim() != dim {
                        return Err(Error::dim(format!(
                            "sum kernel children disagree on input dimension ({} vs {dim})",
                            c.input_dim()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            KernelSpec::SquaredExponentialArd { lengthscales, .. }
            | KernelSpec::AdditiveMatern32 { lengthscales, .. } => lengthscales.len(),
            KernelSpec::Sum(children) => children.first().map_or(0, KernelSpec::input_dim),
        }
    }

    /// `k(x, x)`, identical for every `x` since all kernels are stationary.
    pub fn total_signal_variance(&self) -> f64 {
        match self {
            KernelSpec::SquaredExponentialArd { signal_variance, .. }
            | KernelSpec::AdditiveMatern32 { signal_variance, .. } => *signal_variance,
            KernelSpec::Sum(children) => children.iter().map(KernelSpec::total_signal_variance).sum(),
        }
    }

    /// Base diagonal jitter for square Gram matrices of this kernel.
    pub fn jitter(&self) -> f64 {
        JITTER_FACTOR * self.total_signal_variance()
    }

    pub fn num_params(&self) -> usize {
        match self {
            KernelSpec::SquaredExponentialArd { lengthscales, .. }
            | KernelSpec::AdditiveMatern32 { lengthscales, .. } => 1 + lengthscales.len(),
            KernelSpec::Sum(children) => children.iter().map(KernelSpec::num_params).sum(),
        }
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.push_log_params(&mut out);
        out
    }

    fn push_log_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            }
            | KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                out.push(signal_variance.ln());
                out.extend(lengthscales.iter().map(|l| l.ln()));
            }
            KernelSpec::Sum(children) => children.iter().for_each(|c| c.push_log_params(out)),
        }
    }

    /// Same structure with hyperparameters replaced by `exp(params)`.
    pub fn with_log_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(Error::dim(format!(
                "kernel has {} hyperparameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut cursor = 0;
        let out = self.rebuild(params, &mut cursor);
        out.validate()?;
        Ok(out)
    }

    fn rebuild(&self, params: &[f64], cursor: &mut usize) -> Self {
        let mut leaf = |d: usize| {
            let sv = params[*cursor].exp();
            let ls = params[*cursor + 1..*cursor + 1 + d].iter().map(|p| p.exp()).collect();
            *cursor += 1 + d;
            (sv, ls)
        };
        match self {
            KernelSpec::SquaredExponentialArd { lengthscales, .. } => {
                let (signal_variance, lengthscales) = leaf(lengthscales.len());
                KernelSpec::SquaredExponentialArd {
                    signal_variance,
                    lengthscales,
                }
            }
            KernelSpec::AdditiveMatern32 { lengthscales, .. } => {
                let (signal_variance, lengthscales) = leaf(lengthscales.len());
                KernelSpec::AdditiveMatern32 {
                    signal_variance,
                    lengthscales,
                }
            }
            KernelSpec::Sum(children) => {
                KernelSpec::Sum(children.iter().map(|c| c.rebuild(params, cursor)).collect())
            }
        }
    }

    /// Human-readable names of the log-hyperparameters, in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_param_names("", &mut out);
        out
    }

    fn push_param_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            KernelSpec::SquaredExponentialArd { lengthscales, .. }
            | KernelSpec::AdditiveMatern32 { lengthscales, .. } => {
                out.push(format!("{prefix}log_signal_variance"));
                out.extend((0..lengthscales.len()).map(|d| format!("{prefix}log_lengthscale_{d}")));
            }
            KernelSpec::Sum(children) => {
                for (i, c) in children.iter().enumerate() {
                    c.push_param_names(&format!("{prefix}child{i}."), out);
                }
            }
        }
    }

    /// `(parameter index, signal variance)` for every leaf.
    pub fn signal_variance_params(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut cursor = 0;
        self.push_sv_params(&mut cursor, &mut out);
        out
    }

    fn push_sv_params(&self, cursor: &mut usize, out: &mut Vec<(usize, f64)>) {
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            }
            | KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                out.push((*cursor, *signal_variance));
                *cursor += 1 + lengthscales.len();
            }
            KernelSpec::Sum(children) => children.iter().for_each(|c| c.push_sv_params(cursor, out)),
        }
    }

    /// Per-dimension inverse lengthscales. For sums the children's inverse
    /// lengthscales are added.
    pub fn inverse_lengthscales(&self) -> Vec<f64> {
        match self {
            KernelSpec::SquaredExponentialArd { lengthscales, .. }
            | KernelSpec::AdditiveMatern32 { lengthscales, .. } => {
                lengthscales.iter().map(|l| 1.0 / l).collect()
            }
            KernelSpec::Sum(children) => {
                let mut acc = vec![0.0; self.input_dim()];
                for c in children {
                    for (a, v) in acc.iter_mut().zip(c.inverse_lengthscales()) {
                        *a += v;
                    }
                }
                acc
            }
        }
    }

    /// Kernel value without dimension checks; both slices must have length
    /// `input_dim()`.
    #[inline]
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            } => {
                let mut q = 0.0;
                for ((a, b), l) in x.iter().zip(x2).zip(lengthscales) {
                    let r = (a - b) / l;
                    q += r * r;
                }
                signal_variance * (-0.5 * q).exp()
            }
            KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                let share = signal_variance / lengthscales.len() as f64;
                let mut acc = 0.0;
                for ((a, b), l) in x.iter().zip(x2).zip(lengthscales) {
                    let s = SQRT3 * (a - b).abs() / l;
                    acc += (1.0 + s) * (-s).exp();
                }
                share * acc
            }
            KernelSpec::Sum(children) => children.iter().map(|c| c.eval(x, x2)).sum(),
        }
    }

    /// Adds `weight * d k(x, x2) / d theta_p` to `out[p]` for every
    /// log-hyperparameter `theta_p`.
    #[inline]
    pub fn accumulate_gradient(&self, x: &[f64], x2: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            } => {
                let mut q = 0.0;
                for ((a, b), l) in x.iter().zip(x2).zip(lengthscales) {
                    let r = (a - b) / l;
                    q += r * r;
                }
                let k = signal_variance * (-0.5 * q).exp();
                let wk = weight * k;
                out[0] += wk;
                for (d, ((a, b), l)) in x.iter().zip(x2).zip(lengthscales).enumerate() {
                    let r = (a - b) / l;
                    out[1 + d] += wk * r * r;
                }
            }
            KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                let share = signal_variance / lengthscales.len() as f64;
                let mut acc = 0.0;
                for (d, ((a, b), l)) in x.iter().zip(x2).zip(lengthscales).enumerate() {
                    let s = SQRT3 * (a - b).abs() / l;
                    let e = (-s).exp();
                    acc += (1.0 + s) * e;
                    out[1 + d] += weight * share * s * s * e;
                }
                out[0] += weight * share * acc;
            }
            KernelSpec::Sum(children) => {
                let mut offset = 0;
                for c in children {
                    let np = c.num_params();
                    c.accumulate_gradient(x, x2, weight, &mut out[offset..offset + np]);
                    offset += np;
                }
            }
        }
    }

    // ---- plain-text fragment ------------------------------------------------

    /// Renders the kernel as a configuration fragment (see [`KernelSpec::from_conf`]).
    pub fn to_conf(&self) -> ConfMap {
        let mut c = ConfMap::new();
        self.write_conf("", &mut c);
        c
    }

    fn write_conf(&self, prefix: &str, c: &mut ConfMap) {
        c.set(&format!("{prefix}kind"), self.kind().name());
        match self {
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                lengthscales,
            }
            | KernelSpec::AdditiveMatern32 {
                signal_variance,
                lengthscales,
            } => {
                c.set(&format!("{prefix}signal_variance"), signal_variance);
                let ls: Vec<String> = lengthscales.iter().map(|l| l.to_string()).collect();
                c.set(&format!("{prefix}lengthscales"), ls.join(", "));
            }
            KernelSpec::Sum(children) => {
                c.set(&format!("{prefix}children"), children.len());
                for (i, ch) in children.iter().enumerate() {
                    ch.write_conf(&format!("{prefix}child.{i}."), c);
                }
            }
        }
    }

    pub fn to_fragment(&self) -> String {
        self.to_conf().to_text()
    }

    /// Parses a kernel fragment.
    ///
    /// ```text
    /// kind = se_ard            # se_ard | additive_matern32 | sum
    /// signal_variance = 1.5
    /// lengthscales = 1.0, 2.5, 0.75
    /// ```
    ///
    /// Sums give `children = N` and then each child under `child.<i>.`.
    pub fn from_conf(c: &ConfMap) -> Result<Self> {
        let kind = KernelKind::parse(c.require("kind")?)?;
        let spec = match kind {
            KernelKind::Sum => {
                let n: usize = c
                    .parse_value("children")?
                    .ok_or_else(|| Error::config("children", "sum kernel needs `children`"))?;
                let children = (0..n)
                    .map(|i| Self::from_conf(&c.with_prefix(&format!("child.{i}."))))
                    .collect::<Result<Vec<_>>>()?;
                KernelSpec::Sum(children)
            }
            _ => {
                let signal_variance: f64 = c
                    .parse_value("signal_variance")?
                    .ok_or_else(|| Error::config("signal_variance", "missing"))?;
                let lengthscales: Vec<f64> = c
                    .parse_list("lengthscales")?
                    .ok_or_else(|| Error::config("lengthscales", "missing"))?;
                if kind == KernelKind::SquaredExponentialArd {
                    KernelSpec::SquaredExponentialArd {
                        signal_variance,
                        lengthscales,
                    }
                } else {
                    KernelSpec::AdditiveMatern32 {
                        signal_variance,
                        lengthscales,
                    }
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_fragment(text: &str) -> Result<Self> {
        Self::from_conf(&ConfMap::parse(text)?)
    }
}

fn check_dim(spec: &KernelSpec, d: usize, what: &str) -> Result<()> {
    if spec.input_dim() != d {
        return Err(Error::dim(format!(
            "{what} has dimension {d}, kernel expects {}",
            spec.input_dim()
        )));
    }
    Ok(())
}

/// `k(x, x2)` with dimension checks.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(spec, x.len(), "x")?;
    check_dim(spec, x2.len(), "x2")?;
    Ok(spec.eval(x, x2))
}

/// Cross-covariance between the rows of `x` and `x2`.
///
/// When `add_jitter` is set and `x` and `x2` are the same matrix, the base
/// jitter ([`KernelSpec::jitter`]) is added to the diagonal.
pub fn kernel_matrix(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    add_jitter: bool,
) -> Result<GramMatrix> {
    check_dim(spec, x.ncols(), "X")?;
    check_dim(spec, x2.ncols(), "X2")?;
    let mut values = cross_matrix(spec, x, x2);
    let mut jitter_applied = 0.0;
    if add_jitter && x.shape() == x2.shape() && x == x2 {
        jitter_applied = spec.jitter();
        for i in 0..values.nrows() {
            values[(i, i)] += jitter_applied;
        }
    }
    Ok(GramMatrix {
        values,
        jitter_applied,
    })
}

/// Unchecked cross-covariance, filled column-parallel.
pub(crate) fn cross_matrix(spec: &KernelSpec, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let m = x2.nrows();
    let xr = to_row_major(x);
    let x2r = to_row_major(x2);
    let mut out = DMatrix::<f64>::zeros(n, m);
    if n == 0 || m == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let zj = &x2r[j * d..(j + 1) * d];
            for (i, v) in col.iter_mut().enumerate() {
                *v = spec.eval(&xr[i * d..(i + 1) * d], zj);
            }
        });
    out
}

/// Symmetric Gram matrix of `x` with itself, no jitter. Only the lower
/// triangle is evaluated.
pub(crate) fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let xr = to_row_major(x);
    let mut out = DMatrix::<f64>::zeros(n, n);
    if n == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let xj = &xr[j * d..(j + 1) * d];
            for (i, v) in col.iter_mut().enumerate().skip(j) {
                *v = spec.eval(&xr[i * d..(i + 1) * d], xj);
            }
        });
    out.fill_upper_triangle_with_lower_triangle();
    out
}

/// `dK / d theta_p` for each log-hyperparameter, without jitter.
pub fn kernel_gradients(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    spec.validate()?;
    check_dim(spec, x.ncols(), "X")?;
    let (n, d) = x.shape();
    let p = spec.num_params();
    let xr = to_row_major(x);
    let mut grads = vec![DMatrix::<f64>::zeros(n, n); p];
    let mut buf = vec![0.0; p];
    for j in 0..n {
        for i in j..n {
            buf.iter_mut().for_each(|b| *b = 0.0);
            spec.accumulate_gradient(&xr[i * d..(i + 1) * d], &xr[j * d..(j + 1) * d], 1.0, &mut buf);
            for (g, v) in grads.iter_mut().zip(&buf) {
                g[(i, j)] = *v;
                g[(j, i)] = *v;
            }
        }
    }
    Ok(grads)
}

/// `sum_ij w_ij * d k(x_i, x2_j) / d theta_p` for every log-hyperparameter,
/// without materializing the gradient matrices.
pub fn gradient_contraction(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_dim(spec, x.ncols(), "X")?;
    check_dim(spec, x2.ncols(), "X2")?;
    if w.shape() != (x.nrows(), x2.nrows()) {
        return Err(Error::dim(format!(
            "weight matrix is {:?}, expected {:?}",
            w.shape(),
            (x.nrows(), x2.nrows())
        )));
    }
    let (n, d) = x.shape();
    let p = spec.num_params();
    let xr = to_row_major(x);
    let x2r = to_row_major(x2);
    // per-column partials summed in a fixed order so results do not depend
    // on the thread schedule
    let partials: Vec<Vec<f64>> = (0..x2.nrows())
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![0.0; p];
            let zj = &x2r[j * d..(j + 1) * d];
            for i in 0..n {
                let wij = w[(i, j)];
                if wij != 0.0 {
                    spec.accumulate_gradient(&xr[i * d..(i + 1) * d], zj, wij, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; p];
    for part in partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    Ok(out)
}

/// Derivative of the base jitter with respect to each log-hyperparameter.
pub fn jitter_gradient(spec: &KernelSpec, multiplier: f64) -> Vec<f64> {
    let mut g = vec![0.0; spec.num_params()];
    for (idx, sv) in spec.signal_variance_params() {
        g[idx] = JITTER_FACTOR * multiplier * sv;
    }
    g
}
