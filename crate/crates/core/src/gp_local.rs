//! Local experts: k-means regions, one independent exact GP per region.
//!
//! Experts share one kernel and one noise variance. `NearestExpert` answers
//! with the expert whose centroid is closest; `WeightedAverage` blends every
//! expert with softmax weights over negative squared centroid distances,
//! which removes the jumps at region boundaries.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cluster::{self, nearest};
use crate::error::{Error, Result};
use crate::gp_exact::{check_noise, check_training_data, fit_exact, predict_exact, ExactGPModel};
use crate::kernels::KernelSpec;
use crate::linalg::{select_entries, select_rows, squared_distance, to_row_major};
use crate::Regressor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionMode {
    NearestExpert,
    WeightedAverage,
}

impl PredictionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" | "nearest_expert" => Ok(PredictionMode::NearestExpert),
            "weighted" | "weighted_average" => Ok(PredictionMode::WeightedAverage),
            other => Err(Error::config("local_mode", format!("unknown mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictionMode::NearestExpert => "nearest",
            PredictionMode::WeightedAverage => "weighted",
        }
    }
}

/// Smallest region kept as its own expert in `d` dimensions.
pub fn min_region_size(d: usize) -> usize {
    10.max(d + 2)
}

#[derive(Clone, Debug)]
pub struct Partition {
    /// One row per region; the mean of its members.
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn num_regions(&self) -> usize {
        self.centroids.nrows()
    }

    /// Member row indices of each region, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_regions()];
        for (i, &r) in self.assignment.iter().enumerate() {
            out[r].push(i);
        }
        out
    }
}

/// k-means into `p` regions, then folds every region smaller than
/// [`min_region_size`] into the region with the nearest centroid,
/// smallest first, until all remaining regions are large enough (or one
/// region is left).
pub fn partition_inputs(x: &DMatrix<f64>, p: usize, seed: u64) -> Result<Partition> {
    let (n, d) = x.shape();
    if p == 0 || p > n {
        return Err(Error::invalid(format!("need 1 <= regions <= n, got {p} regions for n={n}")));
    }
    let km = cluster::kmeans(x, p, seed)?;
    let rows = to_row_major(x);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (i, &a) in km.assignment.iter().enumerate() {
        members[a].push(i);
    }
    let mut centroids: Vec<Option<Vec<f64>>> = (0..p)
        .map(|c| {
            if members[c].is_empty() {
                None
            } else {
                Some(cluster::column_means(&rows, n, d, &members[c]))
            }
        })
        .collect();
    let min_size = min_region_size(d);
    loop {
        let alive: Vec<usize> = (0..p).filter(|&c| centroids[c].is_some()).collect();
        if alive.len() <= 1 {
            break;
        }
        let Some(&small) = alive
            .iter()
            .filter(|&&c| members[c].len() < min_size)
            .min_by_key(|&&c| (members[c].len(), c))
        else {
            break;
        };
        let from = centroids[small].clone().expect("alive region");
        let target = alive
            .iter()
            .copied()
            .filter(|&c| c != small)
            .min_by(|&a, &b| {
                let da = squared_distance(centroids[a].as_ref().unwrap(), &from);
                let db = squared_distance(centroids[b].as_ref().unwrap(), &from);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("at least two regions");
        let moved = std::mem::take(&mut members[small]);
        members[target].extend(moved);
        members[target].sort_unstable();
        centroids[small] = None;
        centroids[target] = Some(cluster::column_means(&rows, n, d, &members[target]));
    }

    let kept: Vec<usize> = (0..p).filter(|&c| centroids[c].is_some()).collect();
    let mut flat = Vec::with_capacity(kept.len() * d);
    let mut assignment = vec![0usize; n];
    for (new_id, &c) in kept.iter().enumerate() {
        flat.extend_from_slice(centroids[c].as_ref().unwrap());
        for &i in &members[c] {
            assignment[i] = new_id;
        }
    }
    Ok(Partition {
        centroids: DMatrix::from_row_slice(kept.len(), d, &flat),
        assignment,
    })
}

#[derive(Clone, Debug)]
pub struct LocalGPModel {
    pub(crate) centroids: DMatrix<f64>,
    pub(crate) experts: Vec<ExactGPModel>,
    pub(crate) mode: PredictionMode,
    pub(crate) min_region_size: usize,
    pub(crate) temperature: f64,
}

impl LocalGPModel {
    pub fn centroids(&self) -> &DMatrix<f64> {
        &self.centroids
    }

    pub fn experts(&self) -> &[ExactGPModel] {
        &self.experts
    }

    pub fn mode(&self) -> PredictionMode {
        self.mode
    }

    pub fn min_region_size(&self) -> usize {
        self.min_region_size
    }

    /// Softmax temperature of `WeightedAverage`, in squared input units.
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_mode(mut self, mode: PredictionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.experts[0].kernel()
    }

    pub fn noise_variance(&self) -> f64 {
        self.experts[0].noise_variance()
    }

    /// Sum of the experts' log marginal likelihoods (block-diagonal model).
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.experts.iter().map(|e| e.log_marginal_likelihood()).sum()
    }

    pub fn from_parts(
        centroids: DMatrix<f64>,
        experts: Vec<ExactGPModel>,
        mode: PredictionMode,
        temperature: f64,
    ) -> Result<Self> {
        if experts.is_empty() || experts.len() != centroids.nrows() {
            return Err(Error::dim(format!(
                "{} experts for {} centroids",
                experts.len(),
                centroids.nrows()
            )));
        }
        let d = centroids.ncols();
        if experts.iter().any(|e| e.kernel().input_dim() != d) {
            return Err(Error::dim("expert input dimension differs from centroids"));
        }
        let model = Self {
            centroids,
            experts,
            mode,
            min_region_size: min_region_size(d),
            temperature: 1.0,
        };
        model.with_temperature(temperature)
    }

    /// Nonnegative weights summing to one over experts, for one test point.
    pub fn weights(&self, point: &[f64]) -> Vec<f64> {
        let d = self.centroids.ncols();
        let rows = to_row_major(&self.centroids);
        softmax_weights(&rows, d, point, self.temperature)
    }
}

fn softmax_weights(centroids: &[f64], d: usize, point: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = centroids
        .chunks_exact(d)
        .map(|c| -squared_distance(c, point) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Median over training points of the squared distance to the nearest
/// centroid; 1 when that median is zero.
fn default_temperature(x: &DMatrix<f64>, centroids: &DMatrix<f64>) -> f64 {
    let d = x.ncols();
    let rows = to_row_major(x);
    let cents = to_row_major(centroids);
    let mut dists: Vec<f64> = rows
        .chunks_exact(d)
        .map(|r| {
            let c = nearest(&cents, d, r);
            squared_distance(&cents[c * d..(c + 1) * d], r)
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

/// Partitions the inputs and fits one exact GP per region, in parallel.
pub fn fit_local(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    regions: usize,
    mode: PredictionMode,
    seed: u64,
) -> Result<LocalGPModel> {
    check_training_data(x, y, kernel)?;
    check_noise(noise_variance)?;
    let partition = partition_inputs(x, regions, seed)?;
    fit_on_partition(x, y, kernel, noise_variance, &partition, mode)
}

/// Fits experts on a precomputed partition.
pub fn fit_on_partition(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &KernelSpec,
    noise_variance: f64,
    partition: &Partition,
    mode: PredictionMode,
) -> Result<LocalGPModel> {
    check_training_data(x, y, kernel)?;
    if partition.assignment.len() != x.nrows() {
        return Err(Error::dim("partition does not match the training inputs"));
    }
    let members = partition.members();
    let experts = members
        .par_iter()
        .enumerate()
        .map(|(r, idx)| {
            let (xr, yr) = if idx.len() == x.nrows() {
                (x.clone(), y.clone())
            } else {
                (select_rows(x, idx), select_entries(y, idx))
            };
            fit_exact(&xr, &yr, kernel, noise_variance).map_err(|e| Error::Region {
                region: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let temperature = default_temperature(x, &partition.centroids);
    Ok(LocalGPModel {
        centroids: partition.centroids.clone(),
        experts,
        mode,
        min_region_size: min_region_size(x.ncols()),
        temperature,
    })
}

pub fn predict_local(model: &LocalGPModel, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = model.centroids.ncols();
    if xstar.ncols() != d {
        return Err(Error::dim(format!("test inputs have {} columns, model expects {d}", xstar.ncols())));
    }
    if model.experts.len() == 1 {
        return predict_exact(&model.experts[0], xstar);
    }
    let q = xstar.nrows();
    let cents = to_row_major(&model.centroids);
    let test = to_row_major(xstar);
    match model.mode {
        PredictionMode::NearestExpert => {
            let owner: Vec<usize> = test.chunks_exact(d.max(1)).take(q).map(|r| nearest(&cents, d, r)).collect();
            let mut groups = vec![Vec::new(); model.experts.len()];
            for (i, &e) in owner.iter().enumerate() {
                groups[e].push(i);
            }
            let parts = groups
                .par_iter()
                .enumerate()
                .filter(|(_, g)| !g.is_empty())
                .map(|(e, g)| predict_exact(&model.experts[e], &select_rows(xstar, g)).map(|p| (g, p)))
                .collect::<Result<Vec<_>>>()?;
            let mut mean = DVector::zeros(q);
            let mut var = DVector::zeros(q);
            for (g, (m, v)) in parts {
                for (k, &i) in g.iter().enumerate() {
                    mean[i] = m[k];
                    var[i] = v[k];
                }
            }
            Ok((mean, var))
        }
        PredictionMode::WeightedAverage => {
            let preds = model
                .experts
                .par_iter()
                .map(|e| predict_exact(e, xstar))
                .collect::<Result<Vec<_>>>()?;
            let mut mean = DVector::zeros(q);
            let mut var = DVector::zeros(q);
            for i in 0..q {
                let w = softmax_weights(&cents, d, &test[i * d..(i + 1) * d], model.temperature);
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (e, (pm, pv)) in preds.iter().enumerate() {
                    m1 += w[e] * pm[i];
                    m2 += w[e] * (pv[i] + pm[i] * pm[i]);
                }
                mean[i] = m1;
                var[i] = (m2 - m1 * m1).max(0.0);
            }
            Ok((mean, var))
        }
    }
}

impl Regressor for LocalGPModel {
    fn input_dim(&self) -> usize {
        self.centroids.ncols()
    }

    fn predict(&self, xstar: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        predict_local(self, xstar)
    }
}
