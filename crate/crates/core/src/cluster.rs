//! Seeded k-means used for inducing-point selection and region partitioning.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, to_row_major};

/// Lloyd iteration cap.
pub const KMEANS_MAX_ITERS: usize = 50;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
}

/// k-means++ seeding followed by at most [`KMEANS_MAX_ITERS`] Lloyd steps.
/// Deterministic given `seed`. Empty clusters keep their previous centroid.
pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let rows = to_row_major(x);
    let row = |i: usize| &rows[i * d..(i + 1) * d];

    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    if k == 1 {
        centroids = column_means(&rows, n, d, &(0..n).collect::<Vec<_>>());
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = rng.random_range(0..n);
        centroids.extend_from_slice(row(first));
        let mut best: Vec<f64> = (0..n).map(|i| squared_distance(row(i), row(first))).collect();
        for _ in 1..k {
            let total: f64 = best.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, b) in best.iter().enumerate() {
                    if target < *b {
                        chosen = i;
                        break;
                    }
                    target -= b;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let c = row(pick).to_vec();
            for (i, b) in best.iter_mut().enumerate() {
                *b = b.min(squared_distance(row(i), &c));
            }
            centroids.extend_from_slice(&c);
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let a = nearest(&centroids, d, row(i));
            if assignment[i] != a {
                assignment[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeansResult {
        centroids: DMatrix::from_row_slice(k, d, &centroids),
        assignment,
    })
}

/// Index of the closest centroid (row-major `centroids`, `d` columns).
/// Ties go to the lowest index.
pub fn nearest(centroids: &[f64], d: usize, point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.chunks_exact(d).enumerate() {
        let dist = squared_distance(cent, point);
        if dist < best_d {
            best_d = dist;
            best = c;
        }
    }
    best
}

pub(crate) fn column_means(rows: &[f64], _n: usize, d: usize, members: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for &i in members {
        for (o, v) in out.iter_mut().zip(&rows[i * d..(i + 1) * d]) {
            *o += v;
        }
    }
    let m = members.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= m);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_column_mean() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 8.0]);
        let r = kmeans(&x, 1, 7).unwrap();
        assert_eq!(r.centroids.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 4.0]);
        assert!(r.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = DMatrix::from_fn(200, 3, |i, j| ((i * 7 + j * 13) % 17) as f64);
        let a = kmeans(&x, 5, 11).unwrap();
        let b = kmeans(&x, 5, 11).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn rejects_too_many_clusters() {
        let x = DMatrix::zeros(3, 1);
        assert!(kmeans(&x, 4, 0).is_err());
        assert!(kmeans(&x, 0, 0).is_err());
    }
}
