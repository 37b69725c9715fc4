//! Acceptance gate. Each test prints one PASS/FAIL line for its criterion.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use gpforecast::conf::ConfMap;
use gpforecast::eval_report::{rmsle, rmsle_log_space};
use gpforecast::gp_exact::{fit_exact, lml_gradients, log_marginal_likelihood, predict_exact};
use gpforecast::gp_local::{fit_local, predict_local, PredictionMode};
use gpforecast::gp_sparse::{collapsed_bound, fit_sparse, predict_sparse};
use gpforecast::hyperopt::{ard_relevance, default_initialization, optimize_hyperparameters, OptimizerSettings};
use gpforecast::kernels::{kernel_gradients, kernel_matrix};
use gpforecast::pipeline::{
    apply_aggregates, fit_aggregates, fit_pipeline, ingest_str, inverse_transform, log_transform_target, statistic,
    PipelineConfig, Statistic, TargetTransform,
};
use gpforecast::{KernelKind, KernelSpec, ModelFamily};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- 1 --------------------------------------------------------------------

#[test]
fn criterion_01_exact_matches_dense_inversion() {
    criterion("1", "exact GP vs dense-inversion oracle", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let n = rng.random_range(5..=200);
            let d = rng.random_range(1..=5);
            let kernel = random_kernel(&mut rng, d);
            let noise = rng.random_range(-7.0f64..0.0).exp();
            let x = uniform_matrix(&mut rng, n, d, -2.0, 2.0);
            let y = smooth_targets(&mut rng, &x, 0.1);
            let xs = uniform_matrix(&mut rng, 20, d, -2.5, 2.5);

            let model = fit_exact(&x, &y, &kernel, noise).unwrap();
            assert_eq!(model.jitter_multiplier(), 1.0);
            let (mean, var) = predict_exact(&model, &xs).unwrap();
            let lml = log_marginal_likelihood(&model);

            let nugget = 1e-6 * kernel.total_signal_variance();
            let c = DMatrix::from_fn(n, n, |i, j| {
                reference_kernel(&kernel, &row(&x, i), &row(&x, j)) + if i == j { noise + nugget } else { 0.0 }
            });
            let (inv, log_det) = gauss_jordan(&c);
            let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * y[j]).sum()).collect();
            let fit: f64 = (0..n).map(|i| y[i] * alpha[i]).sum();
            let lml_ref = -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            let mut mean_ref = DVector::zeros(xs.nrows());
            let mut var_ref = DVector::zeros(xs.nrows());
            for q in 0..xs.nrows() {
                let xq = row(&xs, q);
                let ks: Vec<f64> = (0..n).map(|i| reference_kernel(&kernel, &row(&x, i), &xq)).collect();
                mean_ref[q] = (0..n).map(|i| ks[i] * alpha[i]).sum();
                let quad: f64 = (0..n)
                    .map(|i| ks[i] * (0..n).map(|j| inv[i][j] * ks[j]).sum::<f64>())
                    .sum();
                var_ref[q] = reference_kernel(&kernel, &xq, &xq) + noise - quad;
            }
            let e_mean = max_abs_diff(&mean, &mean_ref) / max_abs(&mean_ref);
            let e_var = max_abs_diff(&var, &var_ref) / max_abs(&var_ref);
            let e_lml = (lml - lml_ref).abs() / lml_ref.abs();
            for (what, e) in [("mean", e_mean), ("variance", e_var), ("log marginal likelihood", e_lml)] {
                assert!(e < 1e-8, "{what} relative error {e:e} (n={n}, d={d}, kernel {})", kernel.kind().name());
                worst = worst.max(e);
            }
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 30.0, "took {secs:.1}s");
        format!("50 problems, worst relative error {worst:.2e}, {secs:.1}s")
    });
}

// ---- 2 --------------------------------------------------------------------

#[test]
fn criterion_02_gradients_match_finite_differences() {
    criterion("2", "analytic gradients vs central differences", || {
        const H: f64 = 1e-5;
        // entries below this magnitude are compared on an absolute scale
        const FLOOR: f64 = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst_k = 0.0f64;
        let mut worst_l = 0.0f64;
        for _ in 0..20 {
            let n = rng.random_range(5..=40);
            let d = rng.random_range(1..=4);
            let kernel = random_kernel(&mut rng, d);
            let noise = rng.random_range(-4.0f64..0.0).exp();
            let x = uniform_matrix(&mut rng, n, d, -2.0, 2.0);
            let y = smooth_targets(&mut rng, &x, 0.1);
            let theta = kernel.log_params();

            let analytic = kernel_gradients(&kernel, &x).unwrap();
            for (p, g) in analytic.iter().enumerate() {
                let gram_at = |delta: f64| {
                    let mut t = theta.clone();
                    t[p] += delta;
                    kernel_matrix(&kernel.with_log_params(&t).unwrap(), &x, &x, false).unwrap().values
                };
                let fd = (gram_at(H) - gram_at(-H)) / (2.0 * H);
                for (a, f) in g.iter().zip(fd.iter()) {
                    worst_k = worst_k.max(rel_err(*a, *f, FLOOR));
                }
            }

            let model = fit_exact(&x, &y, &kernel, noise).unwrap();
            let grad = lml_gradients(&model);
            let lml_at = |p: usize, delta: f64| {
                let mut t = theta.clone();
                let mut ln_noise = noise.ln();
                if p < t.len() {
                    t[p] += delta;
                } else {
                    ln_noise += delta;
                }
                let k = kernel.with_log_params(&t).unwrap();
                log_marginal_likelihood(&fit_exact(&x, &y, &k, ln_noise.exp()).unwrap())
            };
            for (p, g) in grad.iter().enumerate() {
                let fd = (lml_at(p, H) - lml_at(p, -H)) / (2.0 * H);
                worst_l = worst_l.max(rel_err(*g, fd, FLOOR));
            }
        }
        assert!(worst_k < 1e-4, "kernel gradient relative error {worst_k:e}");
        assert!(worst_l < 1e-4, "log marginal likelihood gradient relative error {worst_l:e}");
        format!("20 instances, worst relative error kernel {worst_k:.2e}, likelihood {worst_l:.2e}")
    });
}

// ---- 3 --------------------------------------------------------------------

#[test]
fn criterion_03_sparse_saturates_and_bounds() {
    criterion("3", "sparse saturation and lower bound", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        let mut bound_checks = 0;
        let mut min_gap = f64::INFINITY;
        for _ in 0..12 {
            let n = rng.random_range(10..=200);
            let d = rng.random_range(1..=4);
            let kernel = random_kernel(&mut rng, d);
            let noise = rng.random_range(-5.0f64..-0.5).exp();
            let x = uniform_matrix(&mut rng, n, d, -2.0, 2.0);
            let y = smooth_targets(&mut rng, &x, 0.1);
            let xs = uniform_matrix(&mut rng, 30, d, -2.5, 2.5);

            let exact = fit_exact(&x, &y, &kernel, noise).unwrap();
            let lml = log_marginal_likelihood(&exact);
            let (me, ve) = predict_exact(&exact, &xs).unwrap();
            let sparse = fit_sparse(&x, &y, &kernel, noise, &x).unwrap();
            let (ms, vs) = predict_sparse(&sparse, &xs).unwrap();
            let e = max_abs_diff(&me, &ms)
                .max(max_abs_diff(&ve, &vs))
                .max((sparse.bound_value() - lml).abs());
            assert!(e < 1e-6, "Z = X differs from exact by {e:e} (n={n})");
            worst = worst.max(e);

            for _ in 0..10 {
                let m = rng.random_range(1..=n);
                let z = uniform_matrix(&mut rng, m, d, -2.5, 2.5);
                let bound = collapsed_bound(&x, &y, &kernel, noise, &z).unwrap();
                assert!(bound <= lml, "bound {bound} exceeds log marginal likelihood {lml} (n={n}, m={m})");
                min_gap = min_gap.min(lml - bound);
                bound_checks += 1;
            }
        }
        format!("Z = X worst difference {worst:.2e}; {bound_checks} random Z all below (smallest gap {min_gap:.2e})")
    });
}

// ---- 4 --------------------------------------------------------------------

#[test]
fn criterion_04_sparse_fit_is_linear_in_n() {
    criterion("4", "sparse fit scaling at m = 100", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 4;
        let kernel = KernelSpec::se_ard(1.0, vec![1.0; d]).unwrap();
        let z = uniform_matrix(&mut rng, 100, d, -2.0, 2.0);
        let data: Vec<(DMatrix<f64>, DVector<f64>)> = [10_000, 20_000, 40_000]
            .iter()
            .map(|&n| {
                let x = uniform_matrix(&mut rng, n, d, -2.0, 2.0);
                let y = smooth_targets(&mut rng, &x, 0.1);
                (x, y)
            })
            .collect();
        // sizes are interleaved within each round so drift hits all of them
        let mut samples = vec![Vec::new(); data.len()];
        for _ in 0..7 {
            for ((x, y), s) in data.iter().zip(samples.iter_mut()) {
                s.push(best_time(1, || {
                    fit_sparse(x, y, &kernel, 0.01, &z).unwrap();
                }));
            }
        }
        let times: Vec<f64> = samples.iter_mut().map(|s| median(s)).collect();
        let r1 = times[1] / times[0];
        let r2 = times[2] / times[1];
        for r in [r1, r2] {
            assert!((1.5..=2.5).contains(&r), "growth per doubling {r:.2} (times {times:?})");
        }
        assert!(times[2] < 120.0, "n = 40000 took {:.1}s", times[2]);
        format!(
            "times {:.3}/{:.3}/{:.3}s, growth {r1:.2} and {r2:.2} per doubling",
            times[0], times[1], times[2]
        )
    });
}

// ---- 5 --------------------------------------------------------------------

#[test]
fn criterion_05_local_experts() {
    criterion("5", "local experts", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = KernelSpec::se_ard(1.0, vec![0.8, 1.2]).unwrap();
        let noise = 0.01;

        // a single region is the exact GP
        let x = uniform_matrix(&mut rng, 150, 2, -2.0, 2.0);
        let y = smooth_targets(&mut rng, &x, 0.1);
        let xs = uniform_matrix(&mut rng, 40, 2, -2.5, 2.5);
        let exact = fit_exact(&x, &y, &kernel, noise).unwrap();
        let (me, ve) = predict_exact(&exact, &xs).unwrap();
        let mut single_err = 0.0f64;
        for mode in [PredictionMode::NearestExpert, PredictionMode::WeightedAverage] {
            let local = fit_local(&x, &y, &kernel, noise, 1, mode, 0).unwrap();
            let (ml, vl) = predict_local(&local, &xs).unwrap();
            single_err = single_err
                .max(max_abs_diff(&me, &ml))
                .max(max_abs_diff(&ve, &vl))
                .max((local.log_marginal_likelihood() - log_marginal_likelihood(&exact)).abs());
        }
        assert!(single_err <= 1e-10, "p = 1 differs from exact by {single_err:e}");

        // four regions on n = 4000
        let x = uniform_matrix(&mut rng, 4000, 2, -3.0, 3.0);
        let y = smooth_targets(&mut rng, &x, 0.1);
        let t_exact = best_time(1, || {
            fit_exact(&x, &y, &kernel, noise).unwrap();
        });
        let t_local = best_time(3, || {
            fit_local(&x, &y, &kernel, noise, 4, PredictionMode::WeightedAverage, 0).unwrap();
        });
        let speedup = t_exact / t_local;
        assert!(speedup >= 10.0, "speedup {speedup:.1} (exact {t_exact:.2}s, local {t_local:.3}s)");

        // straight path between the two closest centroids; the nearest-centroid
        // boundary sits at its midpoint
        let weighted = fit_local(&x, &y, &kernel, noise, 4, PredictionMode::WeightedAverage, 0).unwrap();
        let c = weighted.centroids().clone();
        let mut pair = (0, 1);
        let mut best = f64::INFINITY;
        for i in 0..c.nrows() {
            for j in i + 1..c.nrows() {
                let dist = (c.row(i) - c.row(j)).norm();
                if dist < best {
                    best = dist;
                    pair = (i, j);
                }
            }
        }
        let steps = 2000;
        let path = DMatrix::from_fn(steps + 1, 2, |k, col| {
            let t = k as f64 / steps as f64;
            (1.0 - t) * c[(pair.0, col)] + t * c[(pair.1, col)]
        });
        let scan = || {
            let (mu, _) = predict_local(&weighted, &path).unwrap();
            let mut crossing = 0.0f64;
            let mut within = 0.0f64;
            for k in 0..steps {
                let jump = (mu[k + 1] - mu[k]).abs();
                let t0 = k as f64 / steps as f64;
                let t1 = (k + 1) as f64 / steps as f64;
                if t0 < 0.5 && t1 >= 0.5 {
                    crossing = crossing.max(jump);
                } else if t1 <= 0.4 || t0 >= 0.6 {
                    within = within.max(jump);
                }
            }
            (crossing, within)
        };
        let (cross_w, within_w) = scan();
        assert!(
            cross_w <= 10.0 * within_w,
            "boundary jump {cross_w:e} vs within-region {within_w:e}"
        );
        format!(
            "p=1 error {single_err:.1e}; speedup {speedup:.0}x; boundary/within jump ratio {:.2}",
            cross_w / within_w
        )
    });
}

// ---- 6 --------------------------------------------------------------------

#[test]
fn criterion_06_ard_ranks_relevant_features_first() {
    criterion("6", "ARD relevance ranking", || {
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
            let n = 200;
            let x = uniform_matrix(&mut rng, n, 10, -2.0, 2.0);
            let signal: Vec<f64> = (0..n).map(|i| (1.5 * x[(i, 1)]).sin() + 0.5 * x[(i, 3)] * x[(i, 3)]).collect();
            let mean = signal.iter().sum::<f64>() / n as f64;
            let signal_var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
            let noise_sd = (signal_var / 20.0).sqrt();
            let y = DVector::from_fn(n, |i, _| signal[i] + noise_sd * normal(&mut rng));

            let (k0, s0) = default_initialization(KernelKind::SquaredExponentialArd, 10, &y).unwrap();
            let settings = OptimizerSettings {
                seed,
                ..OptimizerSettings::default()
            };
            let (fitted, _) = optimize_hyperparameters(&ModelFamily::Exact, &x, &y, &k0, s0, &settings).unwrap();
            let mut top = ard_relevance(&fitted.kernel, 2).unwrap().feature_indices();
            top.sort_unstable();
            if top == [1, 3] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "relevant features ranked top-2 in {hits} of 10 runs");
        format!("relevant features in the top 2 in {hits}/10 runs (SNR 20)")
    });
}

// ---- 7 --------------------------------------------------------------------

#[test]
fn criterion_07_lengthscale_recovery() {
    criterion("7", "hyperparameter recovery", || {
        let truth = [1.0f64, 5.0];
        let true_kernel = KernelSpec::se_ard(1.0, truth.to_vec()).unwrap();
        let noise: f64 = 0.01;
        let n = 300;
        let mut hits = 0;
        let mut errors = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            // the box spans six lengthscales in each direction
            let x = DMatrix::from_fn(n, 2, |_, j| rng.random_range(-3.0..3.0) * truth[j]);
            let k = kernel_matrix(&true_kernel, &x, &x, false).unwrap().values
                + DMatrix::identity(n, n) * 1e-8;
            let l = k.cholesky().unwrap().l();
            let e = DVector::from_fn(n, |_, _| normal(&mut rng));
            let y = l * e + DVector::from_fn(n, |_, _| noise.sqrt() * normal(&mut rng));

            let (k0, s0) = default_initialization(KernelKind::SquaredExponentialArd, 2, &y).unwrap();
            let settings = OptimizerSettings {
                seed,
                ..OptimizerSettings::default()
            };
            let (fitted, _) = optimize_hyperparameters(&ModelFamily::Exact, &x, &y, &k0, s0, &settings).unwrap();
            let KernelSpec::SquaredExponentialArd { lengthscales, .. } = &fitted.kernel else {
                panic!("unexpected kernel kind");
            };
            let err = (0..2).map(|d| (lengthscales[d].ln() - truth[d].ln()).abs()).fold(0.0, f64::max);
            errors.push(err);
            if err < 0.3 {
                hits += 1;
            }
        }
        assert!(hits >= 8, "recovered in {hits} of 10 runs; log errors {errors:.3?}");
        let worst = errors.iter().copied().fold(0.0, f64::max);
        format!("log-lengthscales within 0.3 in {hits}/10 runs (largest error {worst:.3})")
    });
}

// ---- 8 --------------------------------------------------------------------

const STATS: [Statistic; 4] = [Statistic::Mean, Statistic::Sum, Statistic::Median, Statistic::Std];

fn random_table_text(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut text = String::from("src,extra,g,h,y,week\n");
    let cell = |rng: &mut ChaCha8Rng, p_null: f64, v: String| if rng.random_bool(p_null) { String::new() } else { v };
    for _ in 0..n {
        let src = format!("{}", rng.random_range(-50i32..50) as f64 / 4.0);
        let src = cell(rng, 0.1, src);
        let extra = format!("{}", rng.random_range(0.0..10.0));
        let extra = cell(rng, 0.05, extra);
        let g = ["a", "b", "c", "d", "e"][rng.random_range(0..5)].to_string();
        let g = cell(rng, 0.05, g);
        let h = ["x", "y", "z"][rng.random_range(0..3)].to_string();
        let h = cell(rng, 0.03, h);
        let y = format!("{}", rng.random_range(0.0..200.0));
        let y = cell(rng, 0.05, y);
        let week = format!("{}", rng.random_range(1..=4));
        let week = cell(rng, 0.03, week);
        text.push_str(&format!("{src},{extra},{g},{h},{y},{week}\n"));
    }
    text
}

/// Per-row brute force: the statistic over every other row of the same group
/// whose fold differs from the row's fold.
fn brute_force(groups: &[Option<String>], folds: &[Option<String>], src: &[Option<f64>], stat: Statistic) -> Vec<Option<f64>> {
    (0..groups.len())
        .map(|r| {
            let (Some(g), Some(f)) = (&groups[r], &folds[r]) else {
                return None;
            };
            let values: Vec<f64> = (0..groups.len())
                .filter(|&j| groups[j].as_ref() == Some(g) && folds[j].as_ref().is_some_and(|fj| fj != f))
                .filter_map(|j| src[j])
                .collect();
            if values.is_empty() {
                return None;
            }
            let k = values.len() as f64;
            Some(match stat {
                Statistic::Sum => values.iter().sum(),
                Statistic::Mean => values.iter().sum::<f64>() / k,
                Statistic::Median => {
                    let mut v = values.clone();
                    v.sort_by(f64::total_cmp);
                    let mid = v.len() / 2;
                    if v.len() % 2 == 1 {
                        v[mid]
                    } else {
                        (v[mid - 1] + v[mid]) / 2.0
                    }
                }
                Statistic::Std => {
                    let mean = values.iter().sum::<f64>() / k;
                    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k).sqrt()
                }
            })
        })
        .collect()
}

fn pipeline_config(extra: &str) -> PipelineConfig {
    let text = format!(
        "target = y\nfold_key = week\nnumerical = src, extra\ncategorical = g, h\n\
         aggregates = g:mean:src, g:sum:src, g:median:src, g:std:src, h:mean:y\nlog_target = true\n{extra}"
    );
    PipelineConfig::from_conf(&ConfMap::parse(&text).unwrap(), Path::new(".")).unwrap()
}

#[test]
fn criterion_08_pipeline_correctness() {
    criterion("8", "pipeline correctness", || {
        let config = pipeline_config("");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cells = 0;
        let mut worst_round_trip = 0.0f64;
        for _ in 0..40 {
            let n = rng.random_range(1..=100);
            let table = ingest_str(&random_table_text(&mut rng, n), &config.schema()).unwrap();
            let groups = table.column("g").unwrap().as_text().unwrap().to_vec();
            let folds = table.column("week").unwrap().as_text().unwrap().to_vec();
            let src = table.column("src").unwrap().as_numeric().unwrap().to_vec();

            // aggregates, every statistic, bitwise equality with the brute force
            let specs: Vec<_> = config.aggregates.iter().take(4).cloned().collect();
            let lookups = fit_aggregates(&table, &specs).unwrap();
            let out = apply_aggregates(&table, &lookups).unwrap();
            for (spec, stat) in specs.iter().zip(STATS) {
                assert_eq!(spec.statistic, stat);
                let got = out.column(&spec.column_name()).unwrap().as_numeric().unwrap();
                let want = brute_force(&groups, &folds, &src, stat);
                for (r, (a, b)) in got.iter().zip(&want).enumerate() {
                    assert!(
                        a.map(f64::to_bits) == b.map(f64::to_bits),
                        "{} row {r}: {a:?} vs {b:?}",
                        spec.column_name()
                    );
                    cells += 1;
                }
            }

            // log(y + 1) round trip
            let logged = log_transform_target(&table).unwrap();
            let ly = logged.target().unwrap().as_numeric().unwrap();
            let raw = table.target().unwrap().as_numeric().unwrap();
            let finite: Vec<(f64, f64)> = raw.iter().zip(ly).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
            let back = inverse_transform(&DVector::from_iterator(finite.len(), finite.iter().map(|p| p.1)));
            for ((orig, _), b) in finite.iter().zip(back.iter()) {
                let e = (b - orig).abs() / orig.abs().max(1.0);
                assert!(e <= 1e-12, "round trip of {orig} gave {b}");
                assert_eq!(TargetTransform::Log1p.inverse(TargetTransform::Log1p.forward(*orig)).to_bits(), b.to_bits());
                worst_round_trip = worst_round_trip.max(e);
            }

            // full fit: one-hot blocks and dropped-row counts
            let Ok((matrix, artifact)) = fit_pipeline(&table, &config) else {
                continue;
            };
            let h_raw = table.column("h").unwrap().as_text().unwrap();
            let y_raw = table.target().unwrap().as_numeric().unwrap();
            let extra_raw = table.column("extra").unwrap().as_numeric().unwrap();
            let h_ys: Vec<Option<f64>> = y_raw.iter().map(|v| v.map(f64::ln_1p)).collect();
            let h_mean = brute_force(h_raw, &folds, &h_ys, Statistic::Mean);
            let aggs: Vec<Vec<Option<f64>>> =
                STATS.iter().map(|s| brute_force(&groups, &folds, &src, *s)).collect();
            let expected_dropped = (0..n)
                .filter(|&r| {
                    y_raw[r].is_none()
                        || src[r].is_none()
                        || extra_raw[r].is_none()
                        || groups[r].is_none()
                        || h_raw[r].is_none()
                        || h_mean[r].is_none()
                        || aggs.iter().any(|a| a[r].is_none())
                })
                .count();
            assert_eq!(matrix.dropped_rows, expected_dropped, "dropped-row count");
            assert_eq!(matrix.x.nrows() + matrix.dropped_rows, n);
            for vocab in &artifact.encoding.vocabularies {
                let prefix = format!("{}=", vocab.column);
                let cols: Vec<usize> = (0..matrix.feature_names.len())
                    .filter(|&j| matrix.feature_names[j].starts_with(&prefix))
                    .collect();
                assert_eq!(cols.len(), vocab.values.len());
                for i in 0..matrix.x.nrows() {
                    let s: f64 = cols.iter().map(|&j| matrix.x[(i, j)]).sum();
                    assert_eq!(s, 1.0, "indicators of `{}` in row {i} sum to {s}", vocab.column);
                    assert!(cols.iter().all(|&j| matrix.x[(i, j)] == 0.0 || matrix.x[(i, j)] == 1.0));
                }
            }
        }
        // the library statistic agrees with the brute force on a plain list too
        assert_eq!(statistic(Statistic::Median, &[3.0, 1.0, 2.0, 10.0]), Some(2.5));
        format!("{cells} aggregate cells bit-identical, round trip within {worst_round_trip:.1e}")
    });
}

// ---- 9 --------------------------------------------------------------------

#[test]
fn criterion_09_rmsle_unit_suite() {
    criterion("9", "RMSLE", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.random_range(1..50);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0)).collect();
            assert_eq!(rmsle(&p, &p).unwrap(), 0.0);
            assert_eq!(rmsle(&p, &a).unwrap(), rmsle(&a, &p).unwrap());
            let lp: Vec<f64> = p.iter().map(|v| v.ln_1p()).collect();
            let la: Vec<f64> = a.iter().map(|v| v.ln_1p()).collect();
            let direct = rmsle(&p, &a).unwrap();
            assert!((rmsle_log_space(&lp, &la).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
        }
        let v = rmsle(&[1.0], &[0.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() <= 1e-12, "rmsle(1, 0) = {v}");
        "identity, log 2 and symmetry hold".to_string()
    });
}

// ---- 10 -------------------------------------------------------------------

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/pos_demand")
}

fn copy_fixture(to: &Path) {
    for entry in std::fs::read_dir(fixture_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_gpforecast"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "`gpforecast {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timings.txt")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn summary_rmsle(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    let line = text.lines().nth(1).expect("summary has a data row");
    line.split('\t').last().unwrap().parse().unwrap()
}

fn full_precision_rmsle(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join("truth_vs_pred.csv")).unwrap();
    let (truth, pred): (Vec<f64>, Vec<f64>) = text
        .lines()
        .skip(1)
        .map(|l| {
            let (t, p) = l.split_once(',').unwrap();
            (t.parse::<f64>().unwrap(), p.parse::<f64>().unwrap())
        })
        .unzip();
    rmsle(&pred, &truth).unwrap()
}

#[test]
fn criterion_10_end_to_end_fixture() {
    criterion("10", "end-to-end fixture", || {
        let tmp = tempfile::tempdir().unwrap();
        copy_fixture(tmp.path());
        let conf = tmp.path().join("run.conf");
        let conf = conf.to_str().unwrap();
        let out = tmp.path().join("out");
        let chain = || {
            let start = Instant::now();
            for cmd in ["preprocess", "train", "evaluate", "relevance", "profile"] {
                run_cli(&[cmd, "--config", conf]);
            }
            start.elapsed().as_secs_f64()
        };
        let secs = chain();
        assert!(secs < 60.0, "chain took {secs:.1}s");
        let hp = std::fs::read_to_string(out.join("hyperparameters.conf")).unwrap();
        assert!(hp.contains("family = sparse"), "the fixture run trains the sparse model");
        let score = summary_rmsle(&out);
        assert!(score < 0.2, "RMSLE {score}");
        for name in ["summary.txt", "truth_vs_pred.csv", "profile_0.csv", "profile_1.csv", "relevance.csv", "trace.csv", "model.bin"] {
            assert!(out.join(name).is_file(), "missing {name}");
        }
        let first = snapshot(&out);
        chain();
        let second = snapshot(&out);
        assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
        for (name, bytes) in &first {
            assert!(second[name] == *bytes, "{name} differs on rerun");
        }

        // n = 500: exact and sparse with every training point as an inducing input
        let weeks = format!("pipeline={}", tmp.path().join("pipeline_weeks1-5.conf").display());
        let mut scores = Vec::new();
        for (model, extra) in [("exact", vec![]), ("sparse", vec!["--inducing", "500", "--inducing-strategy", "random"])] {
            let dir = tmp.path().join(format!("n500_{model}"));
            let dir_s = dir.to_str().unwrap();
            let mut base = vec!["--config", conf, "--set", &weeks, "--output", dir_s];
            run_cli(&[&["preprocess"], base.as_slice()].concat());
            base.extend(["--model", model]);
            base.extend(extra);
            run_cli(&[&["train"], base.as_slice()].concat());
            run_cli(&[&["evaluate"], base.as_slice()].concat());
            let train_rows = std::fs::read_to_string(dir.join("train_matrix.csv")).unwrap().lines().count() - 1;
            assert_eq!(train_rows, 500);
            scores.push(full_precision_rmsle(&dir));
        }
        let diff = (scores[0] - scores[1]).abs();
        assert!(diff < 1e-4, "exact {} vs sparse {} differ by {diff:e}", scores[0], scores[1]);
        format!(
            "chain {secs:.1}s, RMSLE {score:.4}, {} files identical on rerun; n=500 exact vs sparse differ by {diff:.1e}",
            first.len()
        )
    });
}

// ---- 11 -------------------------------------------------------------------

/// Optional: set `GPFORECAST_BIMBO_CSV` to a subsample of the public Kaggle
/// training file (about one million rows) to run this check.
#[test]
fn criterion_11_bimbo_smoke() {
    let title = "Bimbo smoke test";
    let Some(data) = std::env::var_os("GPFORECAST_BIMBO_CSV").filter(|p| Path::new(p).is_file()) else {
        skip("11", title, "set GPFORECAST_BIMBO_CSV to a Kaggle train.csv subsample to run");
        return;
    };
    criterion("11", title, || {
        let tmp = tempfile::tempdir().unwrap();
        let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bimbo/run.conf");
        let data_set = format!("data={}", Path::new(&data).canonicalize().unwrap().display());
        let out = tmp.path().join("out");
        for cmd in ["preprocess", "train", "evaluate"] {
            run_cli(&[cmd, "--config", conf.to_str().unwrap(), "--set", &data_set, "--output", out.to_str().unwrap()]);
        }
        let score = summary_rmsle(&out);
        assert!(score < 0.75, "RMSLE {score}");
        format!("RMSLE {score:.5}")
    });
}
