//! Python bindings. Matrices cross the boundary as lists of rows.

use ::gpforecast as gp;
use ::gpforecast::hyperopt::{ModelFamily, OptimizerSettings};
use ::gpforecast::{GpModel, KernelKind, KernelSpec, Regressor};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: gp::Error) -> PyErr {
    match e {
        gp::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Covariance function with its hyperparameters.
#[pyclass(name = "Kernel", module = "gpforecast", frozen, from_py_object)]
#[derive(Clone)]
struct PyKernel {
    spec: KernelSpec,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn se_ard(signal_variance: f64, lengthscales: Vec<f64>) -> PyResult<Self> {
        let spec = KernelSpec::se_ard(signal_variance, lengthscales).map_err(err)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    fn additive_matern32(signal_variance: f64, lengthscales: Vec<f64>) -> PyResult<Self> {
        let spec = KernelSpec::additive_matern32(signal_variance, lengthscales).map_err(err)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    fn sum(children: Vec<PyKernel>) -> PyResult<Self> {
        let spec = KernelSpec::sum(children.into_iter().map(|k| k.spec).collect()).map_err(err)?;
        Ok(Self { spec })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.spec.kind().name()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// `k(a, b)` for two points.
    fn __call__(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        gp::kernels::kernel_eval(&self.spec, &a, &b).map_err(err)
    }

    /// Cross-covariance matrix between the rows of `x` and `x2` (defaults to `x`).
    #[pyo3(signature = (x, x2=None))]
    fn matrix(&self, x: Vec<Vec<f64>>, x2: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let a = matrix(x)?;
        let b = match x2 {
            Some(b) => matrix(b)?,
            None => a.clone(),
        };
        let gram = gp::kernels::kernel_matrix(&self.spec, &a, &b, false).map_err(err)?;
        Ok(rows(&gram.values))
    }

    fn __repr__(&self) -> String {
        format!("Kernel({:?})", self.spec)
    }
}

/// A fitted regressor of any family.
#[pyclass(name = "Model", module = "gpforecast", frozen)]
struct PyModel {
    inner: GpModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family_name()
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel {
            spec: self.inner.kernel().clone(),
        }
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    /// Log marginal likelihood (exact, local) or the collapsed bound (sparse).
    fn objective(&self) -> f64 {
        match &self.inner {
            GpModel::Exact(m) => m.log_marginal_likelihood(),
            GpModel::Sparse(m) => m.bound_value(),
            GpModel::Local(m) => m.log_marginal_likelihood(),
        }
    }

    /// Predictive means and variances at the rows of `x`.
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let xs = matrix(x)?;
        let (mean, var) = py.detach(|| self.inner.predict(&xs)).map_err(err)?;
        Ok((mean.as_slice().to_vec(), var.as_slice().to_vec()))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: GpModel::from_bytes(data).map_err(err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: GpModel::load(&path).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(family={}, kernel={})", self.inner.family_name(), self.inner.kernel().kind().name())
    }
}

fn training(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<(DMatrix<f64>, DVector<f64>)> {
    Ok((matrix(x)?, DVector::from_vec(y)))
}

#[pyfunction]
fn fit_exact(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<f64>, kernel: &PyKernel, noise_variance: f64) -> PyResult<PyModel> {
    let (x, y) = training(x, y)?;
    let model = py
        .detach(|| gp::gp_exact::fit_exact(&x, &y, &kernel.spec, noise_variance))
        .map_err(err)?;
    Ok(PyModel {
        inner: GpModel::Exact(model),
    })
}

#[pyfunction]
fn fit_sparse(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: &PyKernel,
    noise_variance: f64,
    inducing: Vec<Vec<f64>>,
) -> PyResult<PyModel> {
    let (x, y) = training(x, y)?;
    let z = matrix(inducing)?;
    let model = py
        .detach(|| gp::gp_sparse::fit_sparse(&x, &y, &kernel.spec, noise_variance, &z))
        .map_err(err)?;
    Ok(PyModel {
        inner: GpModel::Sparse(model),
    })
}

#[pyfunction]
#[pyo3(signature = (x, y, kernel, noise_variance, regions, mode="weighted", seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit_local(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: &PyKernel,
    noise_variance: f64,
    regions: usize,
    mode: &str,
    seed: u64,
) -> PyResult<PyModel> {
    let (x, y) = training(x, y)?;
    let mode = gp::PredictionMode::parse(mode).map_err(err)?;
    let model = py
        .detach(|| gp::gp_local::fit_local(&x, &y, &kernel.spec, noise_variance, regions, mode, seed))
        .map_err(err)?;
    Ok(PyModel {
        inner: GpModel::Local(model),
    })
}

/// Picks `m` inducing inputs from the rows of `x` (`"random"` or `"kmeans"`).
#[pyfunction]
#[pyo3(signature = (x, m, strategy="kmeans", seed=0))]
fn select_inducing(x: Vec<Vec<f64>>, m: usize, strategy: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let strategy = gp::InducingStrategy::parse(strategy).map_err(err)?;
    let z = gp::gp_sparse::select_inducing(&matrix(x)?, m, strategy, seed).map_err(err)?;
    Ok(rows(&z))
}

/// Maximizes the marginal likelihood (or sparse bound) from the default
/// initialization. Returns `(kernel, noise_variance, objective, trace)`.
#[pyfunction]
#[pyo3(signature = (x, y, kernel="se_ard", family="exact", inducing=None, regions=4, max_iters=200, tolerance=1e-5, restarts=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn optimize(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: &str,
    family: &str,
    inducing: Option<Vec<Vec<f64>>>,
    regions: usize,
    max_iters: usize,
    tolerance: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<(PyKernel, f64, f64, Vec<f64>)> {
    let (x, y) = training(x, y)?;
    let kind = KernelKind::parse(kernel).map_err(err)?;
    let family = match family {
        "exact" => ModelFamily::Exact,
        "sparse" => {
            let z = inducing.ok_or_else(|| PyValueError::new_err("the sparse family needs `inducing`"))?;
            ModelFamily::Sparse { inducing: matrix(z)? }
        }
        "local" => ModelFamily::Local { regions, seed },
        other => return Err(PyValueError::new_err(format!("unknown family `{other}`"))),
    };
    let settings = OptimizerSettings {
        max_iters,
        tolerance,
        restarts,
        seed,
    };
    let (fitted, trace) = py
        .detach(|| {
            let (k0, s0) = gp::hyperopt::default_initialization(kind, x.ncols(), &y)?;
            gp::hyperopt::optimize_hyperparameters(&family, &x, &y, &k0, s0, &settings)
        })
        .map_err(err)?;
    Ok((
        PyKernel { spec: fitted.kernel },
        fitted.noise_variance,
        fitted.objective,
        trace.objective_values,
    ))
}

/// `(feature index, inverse lengthscale)` pairs, most relevant first.
#[pyfunction]
fn ard_relevance(kernel: &PyKernel, top_k: usize) -> PyResult<Vec<(usize, f64)>> {
    Ok(gp::hyperopt::ard_relevance(&kernel.spec, top_k).map_err(err)?.entries)
}

#[pyfunction]
fn rmsle(predictions: Vec<f64>, actuals: Vec<f64>) -> PyResult<f64> {
    gp::eval_report::rmsle(&predictions, &actuals).map_err(err)
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| gp::cli::main_with_args(std::iter::once("gpforecast".to_string()).chain(args)))
}

#[pymodule(name = "gpforecast")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_exact, m)?)?;
    m.add_function(wrap_pyfunction!(fit_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(fit_local, m)?)?;
    m.add_function(wrap_pyfunction!(select_inducing, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(ard_relevance, m)?)?;
    m.add_function(wrap_pyfunction!(rmsle, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
