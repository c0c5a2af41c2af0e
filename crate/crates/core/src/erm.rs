//! Finite-size simulator: dataset sampling, ridge and logistic fits, and
//! empirical errors.
//!
//! Points follow `x = y·μ/√d + √Δ z` with `μ ~ N(0, I_d)`, so the realised
//! centroid Gram matrix is close to `[[1, −1], [−1, 1]]`. Predictions are
//! `η = wᵀx/√d + b`.

use crate::error::{Error, Result};
use crate::loss::{sigmoid, LossKind};
use crate::metrics::classify;
use crate::state_evolution::ProblemSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `‖w‖/√d` above which a logistic fit is reported as diverging.
pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e3;
/// Below this `λ` a fit that separates its training set is reported as
/// diverging: `‖w‖` then grows like `ln(1/λ)` along the max-margin ray and
/// has no finite `λ → 0` limit.
pub const SEPARATION_LAMBDA: f64 = 1e-6;
pub const DEFAULT_LOGISTIC_TOL: f64 = 1e-8;
const LOGISTIC_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Label equals cloud membership.
    Class,
    /// Rademacher labels independent of the point.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub spec: ProblemSpec,
    pub label_mode: LabelMode,
    /// `‖μ‖²/d`; the realised Gram matrix is `[[g, −g], [−g, g]]`.
    pub realized_gram: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n × d` covariates.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Cloud membership `±1` of each point.
    pub cloud: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Unscaled centroid direction; clouds sit at `±mu/√d`.
    pub mu: DVector<f64>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Regularised empirical risk divided by `n`.
    pub objective: f64,
    /// Euclidean norm of the gradient of `objective`.
    pub grad_norm: f64,
    pub iterations: usize,
    /// Ridge at `λ = 0` solved through the pseudo-inverse.
    pub min_norm: bool,
    /// `‖w‖/√d` exceeded the divergence guard.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub w: DVector<f64>,
    pub b: f64,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalErrors {
    pub eps_g: f64,
    pub eps_t: f64,
    pub eps_l: f64,
    pub mse_g: f64,
}

/// Mixes a root seed with a stream index (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rademacher<R: Rng>(rng: &mut R, p_plus: f64) -> f64 {
    if rng.gen::<f64>() < p_plus {
        1.0
    } else {
        -1.0
    }
}

pub fn sample_dataset(spec: &ProblemSpec, n: usize, d: usize, seed: u64, label_mode: LabelMode) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config(format!("dataset needs n, d >= 1, got n={n}, d={d}")));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cloud: Vec<f64> = (0..n).map(|_| rademacher(&mut rng, spec.rho_plus)).collect();
    let y: Vec<f64> = match label_mode {
        LabelMode::Class => cloud.clone(),
        LabelMode::Random => (0..n).map(|_| rademacher(&mut rng, 0.5)).collect(),
    };
    let deltas: Vec<f64> = (0..n).map(|_| spec.variance.draw(&mut rng)).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let s = deltas[i].sqrt();
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = cloud[i] * mu[j] * scale + s * z;
        }
    }
    let g = mu.norm_squared() / d as f64;
    Ok(Dataset {
        x,
        y: DVector::from_vec(y),
        cloud,
        deltas,
        mu,
        meta: DatasetMeta {
            n,
            d,
            seed,
            spec: *spec,
            label_mode,
            realized_gram: [[g, -g], [-g, g]],
        },
    })
}

// X/√d
fn scaled_design(data: &Dataset) -> DMatrix<f64> {
    &data.x * (1.0 / (data.meta.d as f64).sqrt())
}

fn predictions(a: &DMatrix<f64>, w: &DVector<f64>, b: f64) -> DVector<f64> {
    let mut eta = a * w;
    eta.add_scalar_mut(b);
    eta
}

/// Per-sample regularised risk and its gradient in `(w, b)`.
fn objective_and_gradient(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    b: f64,
    lambda: f64,
    loss: LossKind,
) -> (f64, DVector<f64>, f64) {
    let n = y.len() as f64;
    let eta = predictions(a, w, b);
    let mut value = 0.0;
    let mut r = DVector::zeros(y.len());
    for i in 0..y.len() {
        value += loss.value(y[i], eta[i]);
        r[i] = loss.derivative(y[i], eta[i]);
    }
    let grad_w = (a.tr_mul(&r) + w * lambda) / n;
    let grad_b = r.sum() / n;
    let objective = (value + 0.5 * lambda * w.norm_squared()) / n;
    (objective, grad_w, grad_b)
}

/// Exact minimiser of `Σ½(y − xᵀw/√d − b)² + λ‖w‖²/2` with `b` unregularised.
///
/// Columns are centred so `b` drops out; the resulting ridge system is solved
/// in whichever of the `d × d` or `n × n` forms is smaller. At `λ = 0` the
/// minimum-norm solution is taken from a pseudo-inverse.
pub fn fit_ridge_square(data: &Dataset, lambda: f64) -> Result<Estimator> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let a = scaled_design(data);
    let (n, d) = a.shape();
    let col_mean = DVector::from_fn(d, |j, _| a.column(j).mean());
    let y_mean = data.y.mean();
    let mut ac = a.clone();
    for j in 0..d {
        ac.column_mut(j).add_scalar_mut(-col_mean[j]);
    }
    let yc = data.y.add_scalar(-y_mean);
    let act = ac.transpose();

    let solve = |mut k: DMatrix<f64>, rhs: DVector<f64>| -> (DVector<f64>, bool) {
        if lambda > 0.0 {
            for i in 0..k.nrows() {
                k[(i, i)] += lambda;
            }
            if let Some(ch) = k.clone().cholesky() {
                return (ch.solve(&rhs), false);
            }
        }
        let svd = k.svd(true, true);
        let tol = svd.singular_values.max() * (n.max(d) as f64) * f64::EPSILON;
        (svd.solve(&rhs, tol).expect("svd computed with both factors"), lambda == 0.0)
    };
    let (w, min_norm) = if n >= d {
        solve(&act * &ac, &act * &yc)
    } else {
        let (coef, flag) = solve(&ac * &act, yc.clone());
        (&act * coef, flag)
    };
    let b = y_mean - col_mean.dot(&w);
    let (objective, gw, gb) = objective_and_gradient(&a, &data.y, &w, b, lambda, LossKind::Square);
    Ok(Estimator {
        w,
        b,
        diagnostics: FitDiagnostics {
            objective,
            grad_norm: (gw.norm_squared() + gb * gb).sqrt(),
            iterations: 1,
            min_norm,
            diverged: false,
        },
    })
}

/// Regularised logistic regression by damped Newton steps on `(w, b)`.
///
/// Stops when the gradient of the per-sample risk has norm `≤ tol`. A fit
/// whose `‖w‖/√d` passes `guard` stops early with `diverged` set; the flag is
/// also set when `λ < SEPARATION_LAMBDA` and the fit separates the data.
pub fn fit_logistic(data: &Dataset, lambda: f64, tol: f64) -> Result<Estimator> {
    fit_logistic_guarded(data, lambda, tol, DEFAULT_DIVERGENCE_GUARD)
}

pub fn fit_logistic_guarded(data: &Dataset, lambda: f64, tol: f64, guard: f64) -> Result<Estimator> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("logistic fit needs lambda > 0, got {lambda}")));
    }
    let a = scaled_design(data);
    let at = a.transpose();
    let (n, d) = a.shape();
    let nf = n as f64;
    let y = &data.y;
    let loss = LossKind::Logistic;
    let sqrt_d = (d as f64).sqrt();

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let (mut obj, mut gw, mut gb) = objective_and_gradient(&a, y, &w, b, lambda, loss);
    let mut grad_norm = (gw.norm_squared() + gb * gb).sqrt();
    let diag = |iterations, grad_norm, objective, diverged| FitDiagnostics {
        objective,
        grad_norm,
        iterations,
        min_norm: false,
        diverged,
    };
    for iteration in 0..LOGISTIC_MAX_ITER {
        if grad_norm <= tol {
            let separated = lambda < SEPARATION_LAMBDA
                && predictions(&a, &w, b).iter().zip(y.iter()).all(|(e, y)| e * y > 0.0);
            return Ok(Estimator {
                w,
                b,
                diagnostics: diag(iteration, grad_norm, obj, separated),
            });
        }
        if w.norm() / sqrt_d > guard {
            return Ok(Estimator {
                w,
                b,
                diagnostics: diag(iteration, grad_norm, obj, true),
            });
        }
        // Hessian of the per-sample risk on z = [x/√d, 1].
        let eta = predictions(&a, &w, b);
        let curv: Vec<f64> = eta.iter().map(|&e| {
            let s = sigmoid(e);
            s * (1.0 - s)
        }).collect();
        let mut weighted = at.clone();
        for (i, &c) in curv.iter().enumerate() {
            weighted.column_mut(i).scale_mut(c);
        }
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        let hww = &weighted * &a;
        hess.view_mut((0, 0), (d, d)).copy_from(&hww);
        let hwb = weighted.column_sum();
        hess.view_mut((0, d), (d, 1)).copy_from(&hwb);
        hess.view_mut((d, 0), (1, d)).copy_from(&hwb.transpose());
        hess[(d, d)] = curv.iter().sum::<f64>();
        hess /= nf;
        for i in 0..d {
            hess[(i, i)] += lambda / nf;
        }
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&gw);
        rhs[d] = gb;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                hess[(d, d)] += 1e-12;
                hess.cholesky()
                    .map(|ch| ch.solve(&rhs))
                    .unwrap_or_else(|| rhs.clone())
            }
        };
        let slope = -rhs.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new = &w - step.rows(0, d) * t;
            let b_new = b - step[d] * t;
            let (o, g, g_b) = objective_and_gradient(&a, y, &w_new, b_new, lambda, loss);
            if o <= obj + 1e-4 * t * slope || (o - obj).abs() <= 1e-15 * obj.abs() {
                w = w_new;
                b = b_new;
                obj = o;
                gw = g;
                gb = g_b;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad_norm = (gw.norm_squared() + gb * gb).sqrt();
        if !accepted {
            break;
        }
    }
    if grad_norm <= tol {
        return Ok(Estimator {
            w,
            b,
            diagnostics: diag(LOGISTIC_MAX_ITER, grad_norm, obj, false),
        });
    }
    Err(Error::Fit {
        iterations: LOGISTIC_MAX_ITER,
        grad_norm,
        best: Box::new(Estimator {
            w,
            b,
            diagnostics: diag(LOGISTIC_MAX_ITER, grad_norm, obj, false),
        }),
    })
}

/// Training errors on `data` and test errors on `n_test` fresh points.
///
/// A fresh point enters only through `η = k·wᵀμ/d + b + √Δ(‖w‖/√d)ζ`, which
/// has exactly the distribution of `wᵀx/√d + b`, so test points are drawn in
/// that form. Labels of test points follow the dataset's label mode.
pub fn evaluate(est: &Estimator, spec: &ProblemSpec, data: &Dataset, n_test: usize, seed: u64) -> EmpiricalErrors {
    let a = scaled_design(data);
    let eta = predictions(&a, &est.w, est.b);
    let n = data.y.len() as f64;
    let mut wrong = 0usize;
    let mut loss = 0.0;
    for (e, &y) in eta.iter().zip(data.y.iter()) {
        if classify(*e) != y {
            wrong += 1;
        }
        loss += spec.loss.value(y, *e);
    }

    let d = data.meta.d as f64;
    let overlap = est.w.dot(&data.mu) / d;
    let spread = est.w.norm() / d.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_wrong = 0usize;
    let mut sq = 0.0;
    for _ in 0..n_test {
        let k = rademacher(&mut rng, spec.rho_plus);
        let y = match data.meta.label_mode {
            LabelMode::Class => k,
            LabelMode::Random => rademacher(&mut rng, 0.5),
        };
        let delta = spec.variance.draw(&mut rng);
        let z: f64 = rng.sample(StandardNormal);
        let e = k * overlap + est.b + delta.sqrt() * spread * z;
        if classify(e) != y {
            test_wrong += 1;
        }
        sq += (y - e).powi(2);
    }
    let nt = n_test.max(1) as f64;
    EmpiricalErrors {
        eps_g: test_wrong as f64 / nt,
        eps_t: wrong as f64 / n,
        eps_l: loss / n,
        mse_g: sq / nt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitter {
    RidgeSquare { lambda: f64 },
    Logistic { lambda: f64, tol: f64 },
}

impl Fitter {
    pub fn fit(&self, data: &Dataset) -> Result<Estimator> {
        match *self {
            Fitter::RidgeSquare { lambda } => fit_ridge_square(data, lambda),
            Fitter::Logistic { lambda, tol } => fit_logistic(data, lambda, tol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        if xs.is_empty() {
            return MeanStderr {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / k;
        let stderr = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        MeanStderr { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub alpha: f64,
    pub eps_g: MeanStderr,
    pub eps_t: MeanStderr,
    pub eps_l: MeanStderr,
    pub mse_g: MeanStderr,
    /// Seeds whose fit failed; they are left out of the averages.
    pub failures: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n_test: usize,
    pub label_mode: LabelMode,
}

/// Runs every `(α, seed)` pair independently and aggregates per `α`.
/// The dataset for seed `s` at grid index `i` uses `derive_seed(s, i)`.
pub fn run_experiment(
    spec: &ProblemSpec,
    alphas: &[f64],
    seeds: &[u64],
    fitter: &Fitter,
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    spec.validate()?;
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<(usize, Result<(EmpiricalErrors, bool)>)> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let alpha = alphas[i];
            let n = ((alpha * cfg.d as f64).round() as usize).max(1);
            let data_seed = derive_seed(s, i as u64);
            let run = || -> Result<(EmpiricalErrors, bool)> {
                let local = ProblemSpec { alpha, ..*spec };
                let data = sample_dataset(&local, n, cfg.d, data_seed, cfg.label_mode)?;
                let est = fitter.fit(&data)?;
                let errs = evaluate(&est, &local, &data, cfg.n_test, derive_seed(data_seed, u64::MAX));
                Ok((errs, est.diagnostics.diverged))
            };
            (i, run())
        })
        .collect();
    let rows = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut cols: [Vec<f64>; 4] = Default::default();
            let mut failures = 0;
            let mut diverged = 0;
            for (_, outcome) in outcomes.iter().filter(|(j, _)| *j == i) {
                match outcome {
                    Ok((e, div)) => {
                        cols[0].push(e.eps_g);
                        cols[1].push(e.eps_t);
                        cols[2].push(e.eps_l);
                        cols[3].push(e.mse_g);
                        diverged += usize::from(*div);
                    }
                    Err(_) => failures += 1,
                }
            }
            ExperimentRow {
                alpha,
                eps_g: MeanStderr::from_samples(&cols[0]),
                eps_t: MeanStderr::from_samples(&cols[1]),
                eps_l: MeanStderr::from_samples(&cols[2]),
                mse_g: MeanStderr::from_samples(&cols[3]),
                failures,
                diverged,
            }
        })
        .collect();
    Ok(rows)
}
