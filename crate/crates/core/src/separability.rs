//! Linear-separability threshold `α⋆ = max (1 − θ²)/S(θ, γ)`.
//!
//! The inner `f`-integral of `S` is a truncated Gaussian second moment,
//! `∫₀^∞ f² φ(f + s) df = (1 + s²)Φ̂(s) − sφ(s)`, so only the `Δ`-expectation
//! is numerical.

use crate::error::{Error, Result};
use crate::quadrature::{normal_pdf, normal_tail};
use crate::variance::{DeltaMethod, DeltaNodes, Integrator, VarianceModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const THETA_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityConfig {
    pub theta_points: usize,
    pub gamma_points: usize,
    /// Half-width of the `γ` search box.
    pub gamma_max: f64,
    /// Simplex size and value spread at which refinement stops.
    pub tol: f64,
    pub max_iter: usize,
    pub delta_method: DeltaMethod,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        SeparabilityConfig {
            theta_points: 64,
            gamma_points: 64,
            gamma_max: 5.0,
            tol: 1e-6,
            max_iter: 2000,
            delta_method: DeltaMethod::Quadrature { refinement: 1 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityResult {
    pub alpha_star: f64,
    pub theta_star: f64,
    pub gamma_star: f64,
    pub s_at_opt: f64,
    /// The simplex refinement met its tolerance.
    pub converged: bool,
    /// The refined optimum is at least as good as every grid point.
    pub certified: bool,
}

/// `∫₀^∞ f² φ(f + s) df`.
pub fn truncated_second_moment(s: f64) -> f64 {
    (1.0 + s * s) * normal_tail(s) - s * normal_pdf(s)
}

fn s_at_delta(theta: f64, gamma: f64, rho_plus: f64, delta: f64) -> f64 {
    let r = delta.sqrt();
    rho_plus * truncated_second_moment((theta + gamma) / r)
        + (1.0 - rho_plus) * truncated_second_moment((theta - gamma) / r)
}

/// `S(θ, γ)` on a fixed node set.
pub fn s_integral_nodes(theta: f64, gamma: f64, rho_plus: f64, nodes: &DeltaNodes) -> f64 {
    nodes.expect(|d| s_at_delta(theta, gamma, rho_plus, d))
}

/// `S(θ, γ)` with adaptive `Δ`-quadrature to `tol`.
pub fn s_integral(theta: f64, gamma: f64, model: &VarianceModel, rho_plus: f64, tol: f64) -> Result<f64> {
    if !(rho_plus > 0.0 && rho_plus < 1.0) {
        return Err(Error::Domain(format!("rho_plus must lie in (0,1), got {rho_plus}")));
    }
    model.validate()?;
    Ok(model
        .expect(|d| s_at_delta(theta, gamma, rho_plus, d), Integrator::Quadrature { tol })?
        .value)
}

fn objective(theta: f64, gamma: f64, rho_plus: f64, nodes: &DeltaNodes) -> f64 {
    let theta = theta.clamp(THETA_MIN, 1.0);
    (1.0 - theta * theta) / s_integral_nodes(theta, gamma, rho_plus, nodes)
}

/// Locates `α⋆` by a grid search followed by Nelder–Mead refinement.
pub fn alpha_star(model: &VarianceModel, rho_plus: f64, cfg: &SeparabilityConfig) -> Result<SeparabilityResult> {
    if !(rho_plus > 0.0 && rho_plus < 1.0) {
        return Err(Error::Domain(format!("rho_plus must lie in (0,1), got {rho_plus}")));
    }
    if cfg.theta_points < 2 || cfg.gamma_points < 2 || !(cfg.gamma_max > 0.0) {
        return Err(Error::Config("separability grid needs at least 2x2 points and gamma_max > 0".into()));
    }
    model.validate()?;
    let nodes = model.nodes(&cfg.delta_method);

    let thetas: Vec<f64> = (1..=cfg.theta_points)
        .map(|i| i as f64 / cfg.theta_points as f64)
        .collect();
    let gammas: Vec<f64> = (0..cfg.gamma_points)
        .map(|j| -cfg.gamma_max + 2.0 * cfg.gamma_max * j as f64 / (cfg.gamma_points - 1) as f64)
        .collect();
    let grid: Vec<(f64, f64, f64)> = thetas
        .par_iter()
        .flat_map_iter(|&t| {
            let nodes = &nodes;
            gammas.iter().map(move |&g| (t, g, objective(t, g, rho_plus, nodes)))
        })
        .collect();
    let (t0, g0, best_grid) = grid
        .iter()
        .copied()
        .fold((0.0, 0.0, f64::NEG_INFINITY), |acc, x| if x.2 > acc.2 { x } else { acc });

    let step = (1.0 / cfg.theta_points as f64, 2.0 * cfg.gamma_max / (cfg.gamma_points - 1) as f64);
    let (point, converged) = nelder_mead(
        |x| -objective(x[0], x[1], rho_plus, &nodes),
        [t0, g0],
        [step.0, step.1],
        cfg.tol,
        cfg.max_iter,
    );
    let theta = point[0].clamp(THETA_MIN, 1.0);
    let gamma = point[1];
    let s = s_integral_nodes(theta, gamma, rho_plus, &nodes);
    let alpha = (1.0 - theta * theta) / s;
    let (alpha, theta, gamma, s) = if alpha >= best_grid {
        (alpha, theta, gamma, s)
    } else {
        (best_grid, t0, g0, s_integral_nodes(t0, g0, rho_plus, &nodes))
    };
    Ok(SeparabilityResult {
        alpha_star: alpha,
        theta_star: theta,
        gamma_star: gamma,
        s_at_opt: s,
        converged,
        certified: alpha >= best_grid,
    })
}

/// Minimises `f` over the plane. Returns the best vertex and whether the
/// simplex shrank below `tol` within `max_iter` iterations.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(f: F, start: [f64; 2], scale: [f64; 2], tol: f64, max_iter: usize) -> ([f64; 2], bool) {
    let mut simplex = [
        start,
        [start[0] + scale[0], start[1]],
        [start[0], start[1] + scale[1]],
    ];
    let mut values = simplex.map(&f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let size = simplex[1..]
            .iter()
            .map(|p| (p[0] - simplex[0][0]).abs().max((p[1] - simplex[0][1]).abs()))
            .fold(0.0, f64::max);
        if size <= tol && (values[2] - values[0]).abs() <= tol * values[0].abs().max(1.0) {
            return (simplex[0], true);
        }

        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, simplex[2], 0.5)
            };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    (simplex[best], false)
}
