//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use gpforecast::KernelSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Serializes timing-sensitive tests inside one test binary.
pub static SERIAL: Mutex<()> = Mutex::new(());

pub fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Runs one acceptance check and writes a PASS/FAIL line straight to the
/// process stderr, so the verdict is visible even when output is captured.
pub fn criterion(id: &str, title: &str, body: impl FnOnce() -> String) {
    let _guard = serial();
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body));
    let secs = start.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("PASS  criterion {id:>2} {title}: {detail} [{secs:.1}s]\n"),
        Err(e) => format!("FAIL  criterion {id:>2} {title}: {} [{secs:.1}s]\n", panic_message(e.as_ref())),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(e) = outcome {
        panic::resume_unwind(e);
    }
}

pub fn skip(id: &str, title: &str, reason: &str) {
    let line = format!("SKIP  criterion {id:>2} {title}: {reason}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "panicked".into()
    }
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(lo..hi))
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Smooth test function plus Gaussian noise of the given standard deviation.
pub fn smooth_targets(rng: &mut ChaCha8Rng, x: &DMatrix<f64>, noise_sd: f64) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let row = x.row(i);
        let f: f64 = row.iter().enumerate().map(|(j, v)| ((j + 1) as f64 * 0.7 * v).sin()).sum();
        f + noise_sd * normal(rng)
    })
}

/// A random kernel of any supported kind with moderate hyperparameters.
pub fn random_kernel(rng: &mut ChaCha8Rng, d: usize) -> KernelSpec {
    let leaf = |rng: &mut ChaCha8Rng, matern: bool| {
        let sv = rng.random_range(-1.0f64..1.0).exp();
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-0.7f64..1.0).exp()).collect();
        if matern {
            KernelSpec::additive_matern32(sv, ls).unwrap()
        } else {
            KernelSpec::se_ard(sv, ls).unwrap()
        }
    };
    match rng.random_range(0..3) {
        0 => leaf(rng, false),
        1 => leaf(rng, true),
        _ => {
            let a = leaf(rng, false);
            let b = leaf(rng, true);
            KernelSpec::sum(vec![a, b]).unwrap()
        }
    }
}

/// Kernel value written out from the textbook formulas, independent of the
/// library's evaluation code.
pub fn reference_kernel(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec {
        KernelSpec::SquaredExponentialArd {
            signal_variance,
            lengthscales,
        } => {
            let q: f64 = (0..a.len()).map(|i| ((a[i] - b[i]) / lengthscales[i]).powi(2)).sum();
            signal_variance * (-q / 2.0).exp()
        }
        KernelSpec::AdditiveMatern32 {
            signal_variance,
            lengthscales,
        } => {
            let terms: f64 = (0..a.len())
                .map(|i| {
                    let r = 3f64.sqrt() * (a[i] - b[i]).abs() / lengthscales[i];
                    (1.0 + r) * (-r).exp()
                })
                .sum();
            signal_variance / a.len() as f64 * terms
        }
        KernelSpec::Sum(children) => children.iter().map(|c| reference_kernel(c, a, b)).sum(),
    }
}

pub fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Gauss-Jordan inverse plus the log-determinant from the pivots. Symmetric
/// positive definite input needs no pivoting.
pub fn gauss_jordan(a: &DMatrix<f64>) -> (Vec<Vec<f64>>, f64) {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut log_det = 0.0;
    for col in 0..n {
        let p = m[col][col];
        assert!(p > 0.0, "matrix is not positive definite");
        log_det += p.ln();
        for v in m[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = m[col].clone();
        for (i, r) in m.iter_mut().enumerate() {
            if i != col && r[col] != 0.0 {
                let f = r[col];
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let inv = m.into_iter().map(|r| r[n..].to_vec()).collect();
    (inv, log_det)
}

/// Relative error with a floor on the denominator for near-zero entries.
pub fn rel_err(a: f64, reference: f64, floor: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(a.abs()).max(floor)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &DVector<f64>) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Minimum wall time over `reps` runs of `f`.
pub fn best_time(reps: usize, mut f: impl FnMut()) -> f64 {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}
