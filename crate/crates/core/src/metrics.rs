//! Asymptotic errors from the order parameters, Bayes-optimal error and the
//! random-labels quantities.

use crate::error::{Error, Result};
use crate::loss::DEFAULT_PROX_TOL;
use crate::quadrature::{normal_cdf, normal_tail};
use crate::state_evolution::{ChannelQuadrature, OrderParams, ProblemSpec, SolverConfig};
use crate::variance::{DeltaMethod, DeltaNodes, VarianceModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_g: f64,
    pub eps_t: f64,
    pub eps_l: f64,
    pub eps_bayes: Option<f64>,
    pub mse_g: Option<f64>,
}

/// `P(mean + sd·ζ < threshold)` for `ζ ~ N(0,1)`, including `sd = 0`.
fn prob_below(threshold: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        normal_cdf((threshold - mean) / sd)
    } else if mean < threshold {
        1.0
    } else {
        0.0
    }
}

/// Test error with `ζ` integrated analytically; `sign(0) = +1`.
pub fn generalisation_error(p: &OrderParams, spec: &ProblemSpec) -> Result<f64> {
    generalisation_error_with(p, spec, &spec.variance.quadrature_nodes(0))
}

pub fn generalisation_error_with(p: &OrderParams, spec: &ProblemSpec, nodes: &DeltaNodes) -> Result<f64> {
    if !(p.q > 0.0) {
        return Err(Error::Domain(format!("generalisation error needs q > 0, got {}", p.q)));
    }
    let [(_, rho_p), (_, rho_m)] = spec.classes();
    let mean_p = p.m_plus + p.b;
    let mean_m = p.m_minus + p.b;
    Ok(nodes.expect(|d| {
        let sd = (p.q * d).sqrt();
        rho_p * prob_below(0.0, mean_p, sd) + rho_m * (1.0 - prob_below(0.0, mean_m, sd))
    }))
}

/// Training error and training loss `(ε_t, ε_l)`.
///
/// The training error uses the monotonicity of the prox: `h < 0` exactly
/// when `ω < κℓ′_y(0)`, so the `ζ`-integral is a normal CDF.
pub fn training_metrics(p: &OrderParams, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<(f64, f64)> {
    training_metrics_with(p, spec, &ChannelQuadrature::new(&spec.variance, cfg))
}

pub fn training_metrics_with(
    p: &OrderParams,
    spec: &ProblemSpec,
    quad: &ChannelQuadrature,
) -> Result<(f64, f64)> {
    if !(p.q > 0.0 && p.v > 0.0) {
        return Err(Error::Domain(format!(
            "training metrics need q > 0 and v > 0, got q={}, v={}",
            p.q, p.v
        )));
    }
    let loss = spec.loss;
    let m = p.m();
    let mut eps_t = 0.0;
    let mut eps_l = 0.0;
    for (k, (y, rho)) in spec.classes().into_iter().enumerate() {
        let mean = m[k] + p.b;
        let err = quad.delta.expect(|d| {
            let kappa = p.v * d;
            let threshold = kappa * loss.derivative(y, 0.0);
            let below = prob_below(threshold, mean, (p.q * d).sqrt());
            if y > 0.0 {
                below
            } else {
                1.0 - below
            }
        });
        let l = quad.expect(|d, z| {
            let omega = mean + (p.q * d).sqrt() * z;
            let h = loss.prox(y, omega, p.v * d, DEFAULT_PROX_TOL)?.h;
            Ok(loss.value(y, h))
        })?;
        eps_t += rho * err;
        eps_l += rho * l;
    }
    Ok((eps_t, eps_l))
}

/// Test mean-square error `E[(y − η)²] = Σρ(y − m − b)² + qE[Δ]`.
pub fn mse_g(p: &OrderParams, spec: &ProblemSpec) -> f64 {
    let m = p.m();
    let bias: f64 = spec
        .classes()
        .iter()
        .enumerate()
        .map(|(k, (y, rho))| rho * (y - m[k] - p.b).powi(2))
        .sum();
    let mean = spec.variance.moments().mean_delta;
    if p.q == 0.0 {
        bias
    } else {
        bias + p.q * mean
    }
}

/// All errors at once; the Bayes error is included when its moment
/// conditions hold.
pub fn error_report(p: &OrderParams, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<ErrorReport> {
    let quad = ChannelQuadrature::new(&spec.variance, cfg);
    let eps_g = generalisation_error_with(p, spec, &quad.delta)?;
    let (eps_t, eps_l) = training_metrics_with(p, spec, &quad)?;
    let eps_bayes = bayes_optimal_error(&spec.variance, spec.rho_plus, spec.alpha, &cfg.delta_method).ok();
    Ok(ErrorReport {
        eps_g,
        eps_t,
        eps_l,
        eps_bayes,
        mse_g: Some(mse_g(p, spec)),
    })
}

/// Bayes-optimal test error for the two-cloud mixture.
///
/// The expectation over the independent pair `(Δ₀, Δ₀⋆)` runs on the tensor
/// product of the node set selected by `method`. For unbalanced classes the
/// formula is evaluated as written; treat those values as experimental.
pub fn bayes_optimal_error(
    model: &VarianceModel,
    rho_plus: f64,
    alpha: f64,
    method: &DeltaMethod,
) -> Result<f64> {
    if !(rho_plus > 0.0 && rho_plus < 1.0) {
        return Err(Error::Domain(format!("rho_plus must lie in (0,1), got {rho_plus}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let mom = model.moments();
    if !mom.mean_finite {
        return Err(Error::MomentCondition { moment: "E[Delta]" });
    }
    if !mom.inv_sq_finite {
        return Err(Error::MomentCondition { moment: "E[Delta^-2]" });
    }
    let inv = mom.inv_mean;
    let scale = 1.0 + mom.mean_delta * mom.inv_sq_mean / (alpha * inv * inv);
    let shift = 0.5 * (1.0 + 1.0 / (alpha * inv)) * (rho_plus / (1.0 - rho_plus)).ln();
    let nodes = model.nodes(method);
    let outer = |d_star: f64| {
        let denom = (d_star * scale).sqrt();
        if shift == 0.0 {
            normal_tail(1.0 / denom)
        } else {
            nodes.expect(|d0| {
                rho_plus * normal_tail((1.0 + d0 * shift) / denom)
                    + (1.0 - rho_plus) * normal_tail((1.0 - d0 * shift) / denom)
            })
        }
    };
    Ok(nodes.expect(outer))
}

/// Bayes error of an observer that also knows the variance `Δ` of every
/// training and test point.
///
/// With `Δ` known the posterior of the centroid is Gaussian with per-coordinate
/// precision `1 + αE[Δ⁻¹]`, so the error is
/// `E_Δ[ρΦ̂((1 + Δs)/√(ΔB)) + (1 − ρ)Φ̂((1 − Δs)/√(ΔB))]` with
/// `B = 1 + 1/(αE[Δ⁻¹])` and `s = ½B ln(ρ/(1 − ρ))`. Extra information can only
/// help, so this lower-bounds the test error of any estimator. It coincides
/// with [`bayes_optimal_error`] when `Δ` is deterministic.
pub fn informed_bayes_error(
    model: &VarianceModel,
    rho_plus: f64,
    alpha: f64,
    method: &DeltaMethod,
) -> Result<f64> {
    if !(rho_plus > 0.0 && rho_plus < 1.0) {
        return Err(Error::Domain(format!("rho_plus must lie in (0,1), got {rho_plus}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let mom = model.moments();
    if !mom.inv_mean_finite {
        return Err(Error::MomentCondition { moment: "E[Delta^-1]" });
    }
    let scale = 1.0 + 1.0 / (alpha * mom.inv_mean);
    let shift = 0.5 * scale * (rho_plus / (1.0 - rho_plus)).ln();
    Ok(model.nodes(method).expect(|d| {
        let denom = (d * scale).sqrt();
        rho_plus * normal_tail((1.0 + d * shift) / denom)
            + (1.0 - rho_plus) * normal_tail((1.0 - d * shift) / denom)
    }))
}

/// Universal random-labels training loss `½(1 − 1/α)₊`.
pub fn rl_training_loss(alpha: f64) -> f64 {
    if alpha > 1.0 {
        0.5 * (1.0 - 1.0 / alpha)
    } else {
        0.0
    }
}

/// Random-labels test mean-square error `1 + E[Δ]q`.
pub fn rl_mse(q: f64, model: &VarianceModel) -> f64 {
    if q == 0.0 {
        1.0
    } else {
        1.0 + model.moments().mean_delta * q
    }
}

/// Training loss and training error of the random-labels square-loss fixed
/// point `(v, q)`: `ε_l = ½(δ₂ + q(δ₁ − δ₂)/v)` and `ε_t = E[Φ(−v√(Δ/q))]`.
pub fn rl_training_metrics(v: f64, q: f64, nodes: &DeltaNodes) -> Result<(f64, f64)> {
    let d1 = nodes.delta_k(v, 1)?;
    let d2 = nodes.delta_k(v, 2)?;
    let eps_l = 0.5 * (d2 + q * (d1 - d2) / v);
    let eps_t = nodes.expect(|d| prob_below(-v * d, 0.0, (q * d).sqrt()));
    Ok((eps_l, eps_t))
}

/// `sign` with `sign(0) = +1`.
pub fn classify(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0
    } else {
        -1.0
    }
}
