//! Dense linear-algebra helpers shared by the GP models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Multipliers applied to the base jitter on successive factorization attempts.
pub const JITTER_ESCALATION: [f64; 3] = [1.0, 10.0, 100.0];

/// Cholesky factor of a symmetric positive-definite matrix together with the
/// diagonal jitter that had to be added to obtain it.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
    /// Escalation multiplier that succeeded (1, 10 or 100).
    pub multiplier: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log det` of the factorized matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Full inverse of the factorized matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Factorizes `matrix + base_jitter * multiplier * I`, escalating the
/// multiplier through [`JITTER_ESCALATION`] until the factorization succeeds.
///
/// `matrix` must not already contain the jitter.
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>, base_jitter: f64) -> Result<JitteredCholesky> {
    cholesky_escalating(matrix, base_jitter, &JITTER_ESCALATION)
}

/// Like [`cholesky_with_jitter`] but only tries multipliers starting at `start`.
pub fn cholesky_escalating(
    matrix: &DMatrix<f64>,
    base_jitter: f64,
    multipliers: &[f64],
) -> Result<JitteredCholesky> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::dim(format!(
            "cannot factorize a {}x{} matrix",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let mut tried = Vec::with_capacity(multipliers.len());
    for &mult in multipliers {
        let jitter = base_jitter * mult;
        tried.push(jitter);
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if m.iter().any(|v| !v.is_finite()) {
            break;
        }
        if let Some(chol) = Cholesky::new(m) {
            if chol.l_dirty().diagonal().iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Ok(JitteredCholesky {
                    chol,
                    jitter,
                    multiplier: mult,
                });
            }
        }
    }
    Err(Error::Factorization {
        jitter_levels: tried,
    })
}

/// Row `i` of `x` copied into a contiguous vector.
pub fn row_vec(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Row-major copy of a matrix, one contiguous slice per row.
pub fn to_row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

/// Builds a matrix from rows given as slices.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::dim("ragged rows"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Selects the given rows of `x`, in order.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select_entries(y: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
