//! RMSLE scoring, truth-vs-prediction exports and posterior-mean profiles.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::pipeline::TargetTransform;
use crate::Regressor;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} predictions for {} actuals", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("need at least one value"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    Ok(())
}

/// `sqrt(mean((ln(p + 1) - ln(a + 1))²))` on original-scale values.
pub fn rmsle(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair(predictions, actuals)?;
    if let Some(i) = predictions.iter().chain(actuals).position(|v| *v < 0.0) {
        let which = if i < predictions.len() { "prediction" } else { "actual" };
        return Err(Error::invalid(format!(
            "negative {which} at index {}",
            i % predictions.len()
        )));
    }
    let sum: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| {
            let d = p.ln_1p() - a.ln_1p();
            d * d
        })
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

/// The same score computed in `ln(· + 1)` space on transformed values.
/// Predictions below 0 are clipped there, which is exactly the original-scale
/// clip at 0 seen through the transform.
pub fn rmsle_log_space(log_predictions: &[f64], log_actuals: &[f64]) -> Result<f64> {
    check_pair(log_predictions, log_actuals)?;
    if let Some(i) = log_actuals.iter().position(|v| *v < 0.0) {
        return Err(Error::invalid(format!("negative transformed actual at index {i}")));
    }
    let sum: f64 = log_predictions
        .iter()
        .zip(log_actuals)
        .map(|(p, a)| {
            let d = p.max(0.0) - a;
            d * d
        })
        .sum();
    Ok((sum / log_predictions.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub rmsle: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// `(truth, prediction, predictive variance)`; truth and prediction on
    /// the original scale, variance in model (transformed) space.
    pub per_point: Vec<(f64, f64, f64)>,
    pub runtime_seconds: f64,
}

impl EvalReport {
    /// Summary table with one header and one row:
    /// `method, n_train, n_test, rmsle`.
    ///
    /// Wall-clock durations are kept out of this text so reports from
    /// identical runs compare byte for byte; see [`EvalReport::timing_text`].
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method\tn_train\tn_test\trmsle");
        let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", self.method, self.n_train, self.n_test, self.rmsle);
        out
    }

    pub fn timing_text(&self) -> String {
        format!("predict_seconds = {:.6}\n", self.runtime_seconds)
    }

    pub fn truths(&self) -> Vec<f64> {
        self.per_point.iter().map(|p| p.0).collect()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.per_point.iter().map(|p| p.1).collect()
    }
}

/// Predicts `x_test`, maps predictions back to the original scale, clips at
/// zero and scores against `y_test` (original scale).
pub fn evaluate_model(
    method: &str,
    model: &dyn Regressor,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
    transform: TargetTransform,
    n_train: usize,
) -> Result<EvalReport> {
    if x_test.nrows() != y_test.len() {
        return Err(Error::dim(format!("{} test rows but {} targets", x_test.nrows(), y_test.len())));
    }
    if x_test.ncols() != model.input_dim() {
        return Err(Error::dim(format!(
            "test inputs have {} columns, model expects {}",
            x_test.ncols(),
            model.input_dim()
        )));
    }
    let start = Instant::now();
    let (mean, var) = model.predict(x_test)?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    let preds: Vec<f64> = mean.iter().map(|z| transform.inverse(*z).max(0.0)).collect();
    let truths: Vec<f64> = y_test.iter().copied().collect();
    let score = rmsle(&preds, &truths)?;
    Ok(EvalReport {
        method: method.to_string(),
        rmsle: score,
        n_train,
        n_test: truths.len(),
        per_point: truths
            .iter()
            .zip(&preds)
            .zip(var.iter())
            .map(|((t, p), v)| (*t, *p, *v))
            .collect(),
        runtime_seconds,
    })
}

/// `truth,prediction` with a header line.
pub fn truth_vs_pred_text(report: &EvalReport) -> String {
    let mut out = String::from("truth,prediction\n");
    for (t, p, _) in &report.per_point {
        let _ = writeln!(out, "{t},{p}");
    }
    out
}

pub fn export_truth_vs_pred(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, truth_vs_pred_text(report))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorProfile {
    pub feature_index: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Set when the feature is constant and only one probe was used.
    pub warning: Option<String>,
}

impl PosteriorProfile {
    /// `value,mean,variance` with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("value,mean,variance\n");
        for ((g, m), v) in self.grid.iter().zip(&self.mean).zip(&self.variance) {
            let _ = writeln!(out, "{g},{m},{v}");
        }
        out
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sweeps one feature over `grid_size` evenly spaced probes spanning its
/// training range while every other feature sits at its training median.
pub fn posterior_profile(
    model: &dyn Regressor,
    feature_index: usize,
    grid_size: usize,
    train_x: &DMatrix<f64>,
) -> Result<PosteriorProfile> {
    let (n, d) = train_x.shape();
    if feature_index >= d {
        return Err(Error::invalid(format!("feature index {feature_index} out of range for {d} features")));
    }
    if d != model.input_dim() {
        return Err(Error::dim(format!("training inputs have {d} columns, model expects {}", model.input_dim())));
    }
    if grid_size < 2 {
        return Err(Error::invalid("grid size must be at least 2"));
    }
    if n == 0 {
        return Err(Error::invalid("empty training inputs"));
    }
    let baseline: Vec<f64> = (0..d)
        .map(|j| median(&mut train_x.column(j).iter().copied().collect::<Vec<_>>()))
        .collect();
    let col = train_x.column(feature_index);
    let lo = col.min();
    let hi = col.max();
    let (grid, warning) = if hi > lo {
        let step = (hi - lo) / (grid_size - 1) as f64;
        let mut g: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();
        g[grid_size - 1] = hi;
        (g, None)
    } else {
        let msg = format!("feature {feature_index} is constant ({lo}); profile has a single probe");
        log::warn!("{msg}");
        (vec![lo], Some(msg))
    };
    let probes = DMatrix::from_fn(grid.len(), d, |i, j| if j == feature_index { grid[i] } else { baseline[j] });
    let (mean, var) = model.predict(&probes)?;
    Ok(PosteriorProfile {
        feature_index,
        grid,
        mean: mean.iter().copied().collect(),
        variance: var.iter().copied().collect(),
        warning,
    })
}
