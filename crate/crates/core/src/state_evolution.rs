//! Replica state evolution for ridge-regularised ERM on two clouds.
//!
//! The fixed point of the nine order parameters `(m₊, m₋, q, v, b, q̂, v̂, m̂₊,
//! m̂₋)` is found by Newton steps on a reduced five-dimensional map, followed by
//! damped Jacobi iteration which certifies convergence. Hat parameters come
//! from the output channel (an expectation over the class, `ζ ~ N(0,1)` and
//! `Δ ~ ϱ`), the others from the ridge prior in closed form.

use crate::error::{Error, Result};
use crate::loss::{LossKind, DEFAULT_PROX_TOL};
use crate::quadrature::GaussHermite;
use crate::variance::{DeltaNodes, VarianceModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::variance::DeltaMethod;

/// Smallest ridge strength used for logistic loss.
pub const LOGISTIC_LAMBDA_FLOOR: f64 = 1e-6;
const V_FLOOR: f64 = 1e-12;

/// Asymptotic overlaps `G_{kk'} = μ_k·μ_{k'}` of the two centroids, index 0 is `+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidGeometry {
    pub gram: [[f64; 2]; 2],
}

impl Default for CentroidGeometry {
    /// Antipodal unit-norm centroids.
    fn default() -> Self {
        CentroidGeometry {
            gram: [[1.0, -1.0], [-1.0, 1.0]],
        }
    }
}

impl CentroidGeometry {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gram;
        let finite = g.iter().flatten().all(|x| x.is_finite());
        let symmetric = (g[0][1] - g[1][0]).abs() <= 1e-12 * (1.0 + g[0][1].abs());
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let psd = g[0][0] >= 0.0 && g[1][1] >= 0.0 && det >= -1e-12;
        if finite && symmetric && psd {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "centroid Gram matrix must be symmetric positive semidefinite, got {g:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub alpha: f64,
    pub lambda: f64,
    pub rho_plus: f64,
    pub loss: LossKind,
    #[serde(default)]
    pub geometry: CentroidGeometry,
    pub variance: VarianceModel,
}

impl ProblemSpec {
    /// Balanced antipodal task.
    pub fn balanced(alpha: f64, lambda: f64, loss: LossKind, variance: VarianceModel) -> Self {
        ProblemSpec {
            alpha,
            lambda,
            rho_plus: 0.5,
            loss,
            geometry: CentroidGeometry::default(),
            variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.rho_plus > 0.0 && self.rho_plus < 1.0) {
            return Err(Error::Config(format!(
                "rho_plus must lie in (0,1), got {}",
                self.rho_plus
            )));
        }
        self.geometry.validate()?;
        self.variance.validate()
    }

    /// `(label, class weight)` for index 0 (`+`) and 1 (`−`).
    pub fn classes(&self) -> [(f64, f64); 2] {
        [(1.0, self.rho_plus), (-1.0, 1.0 - self.rho_plus)]
    }

    /// Ridge strength actually used by the solver.
    pub fn effective_lambda(&self) -> f64 {
        match self.loss {
            LossKind::Logistic => self.lambda.max(LOGISTIC_LAMBDA_FLOOR),
            LossKind::Square => self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub m_plus: f64,
    pub m_minus: f64,
    pub q: f64,
    pub v: f64,
    pub b: f64,
    pub hat_q: f64,
    pub hat_v: f64,
    pub hat_m_plus: f64,
    pub hat_m_minus: f64,
}

impl Default for OrderParams {
    fn default() -> Self {
        OrderParams {
            m_plus: 0.1,
            m_minus: -0.1,
            q: 0.5,
            v: 1.0,
            b: 0.0,
            hat_q: 0.0,
            hat_v: 0.0,
            hat_m_plus: 0.0,
            hat_m_minus: 0.0,
        }
    }
}

impl OrderParams {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.m_plus,
            self.m_minus,
            self.q,
            self.v,
            self.b,
            self.hat_q,
            self.hat_v,
            self.hat_m_plus,
            self.hat_m_minus,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        OrderParams {
            m_plus: a[0],
            m_minus: a[1],
            q: a[2],
            v: a[3],
            b: a[4],
            hat_q: a[5],
            hat_v: a[6],
            hat_m_plus: a[7],
            hat_m_minus: a[8],
        }
    }

    pub fn m(&self) -> [f64; 2] {
        [self.m_plus, self.m_minus]
    }

    pub fn hat_m(&self) -> [f64; 2] {
        [self.hat_m_plus, self.hat_m_minus]
    }

    /// Largest change between two parameter sets, each measured relative to
    /// `max(1, |self|)`.
    pub fn max_change(&self, other: &OrderParams) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Variables with finite `λ → 0` limits in the separable phase:
    /// `v·λ`, `m·λ`, `b·λ`, `q·λ²` and `v̂/λ`. `q̂` and `m̂` are unchanged.
    pub fn rescaled(&self, lambda: f64) -> OrderParams {
        OrderParams {
            m_plus: self.m_plus * lambda,
            m_minus: self.m_minus * lambda,
            q: self.q * lambda * lambda,
            v: self.v * lambda,
            b: self.b * lambda,
            hat_q: self.hat_q,
            hat_v: self.hat_v / lambda,
            hat_m_plus: self.hat_m_plus,
            hat_m_minus: self.hat_m_minus,
        }
    }

    /// `θ = m/√q` for each class under a unit-norm geometry.
    pub fn theta(&self) -> [f64; 2] {
        let s = self.q.sqrt();
        [self.m_plus / s, self.m_minus / s]
    }

    fn all_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Weight `γ` of the previous iterate in `p ← (1−γ)U(p) + γp`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub zeta_quadrature_nodes: usize,
    pub delta_method: DeltaMethod,
    /// Starting point; `None` uses the default and fills the conjugates from
    /// one channel pass.
    pub init: Option<OrderParams>,
    /// Use the closed-form update for square loss.
    pub square_fast_path: bool,
    /// Run Newton steps on the reduced map before the damped iteration.
    /// Ignored on the square-loss fast path.
    #[serde(default = "default_newton")]
    pub newton: bool,
}

fn default_newton() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            tol: 1e-5,
            max_iter: 1000,
            zeta_quadrature_nodes: 127,
            delta_method: DeltaMethod::default(),
            init: None,
            square_fast_path: true,
            newton: default_newton(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must lie in [0,1), got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.zeta_quadrature_nodes == 0 {
            return Err(Error::Config("zeta_quadrature_nodes must be at least 1".into()));
        }
        if let DeltaMethod::MonteCarlo { samples: 0, .. } = self.delta_method {
            return Err(Error::Config("delta sample count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEResult {
    pub params: OrderParams,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// Number of times `v` or `q` had to be clamped.
    pub clamps: usize,
}

/// Product rule over `ζ` (Gauss–Hermite) and `Δ` (a [`DeltaNodes`] set),
/// built once and reused by every update of a solve.
#[derive(Debug, Clone)]
pub struct ChannelQuadrature {
    pub delta: DeltaNodes,
    pub zeta: GaussHermite,
}

impl ChannelQuadrature {
    pub fn new(model: &VarianceModel, cfg: &SolverConfig) -> Self {
        ChannelQuadrature {
            delta: model.nodes(&cfg.delta_method),
            zeta: GaussHermite::new(cfg.zeta_quadrature_nodes),
        }
    }

    /// `E_{Δ,ζ}[f(Δ, ζ)]`.
    pub fn expect<F: FnMut(f64, f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (d, wd) in self.delta.iter() {
            let mut inner = 0.0;
            for (&z, &wz) in self.zeta.nodes.iter().zip(&self.zeta.weights) {
                inner += wz * f(d, z)?;
            }
            acc += wd * inner;
        }
        Ok(acc)
    }
}

struct Channel {
    hat_q: f64,
    hat_v: f64,
    hat_m: [f64; 2],
    b: f64,
}

fn check_params(p: &OrderParams) -> Result<()> {
    if !p.all_finite() {
        return Err(Error::Guard(format!("non-finite order parameters {p:?}")));
    }
    if !(p.v > 0.0) {
        return Err(Error::Guard(format!("v must be positive, got {}", p.v)));
    }
    if p.q < 0.0 {
        return Err(Error::Guard(format!("q must be nonnegative, got {}", p.q)));
    }
    Ok(())
}

// Output channel for any loss: prox over the (class, Δ, ζ) product rule.
// The bias moves by one Newton step on Σ_k ρ_k E[Δ f_k] = 0, the stationarity
// condition behind b = E[h − m].
fn channel_general(p: &OrderParams, spec: &ProblemSpec, quad: &ChannelQuadrature) -> Result<Channel> {
    let loss = spec.loss;
    let m = p.m();
    let mut hat_q = 0.0;
    let mut curvature = 0.0;
    let mut hat_m = [0.0; 2];
    let mut gradient = 0.0;
    for (k, (y, rho)) in spec.classes().into_iter().enumerate() {
        let mut e_f = 0.0;
        let mut e_df = 0.0;
        let mut e_df2 = 0.0;
        let mut e_curv = 0.0;
        for (d, wd) in quad.delta.iter() {
            let kappa = p.v * d;
            let spread = (p.q * d).sqrt();
            let (mut f1, mut f2, mut c1) = (0.0, 0.0, 0.0);
            for (&z, &wz) in quad.zeta.nodes.iter().zip(&quad.zeta.weights) {
                let omega = m[k] + p.b + spread * z;
                let pr = loss.prox(y, omega, kappa, DEFAULT_PROX_TOL)?;
                let c = loss.curvature(y, pr.h);
                f1 += wz * pr.f;
                f2 += wz * pr.f * pr.f;
                c1 += wz * c / (1.0 + kappa * c);
            }
            e_f += wd * f1;
            e_df += wd * d * f1;
            e_df2 += wd * d * f2;
            e_curv += wd * d * c1;
        }
        hat_q += rho * e_df2;
        curvature += rho * e_curv;
        gradient += rho * e_df;
        hat_m[k] = spec.alpha * rho * e_f;
    }
    // For square loss the step is exact and needs no cap.
    let cap = match loss {
        LossKind::Square => f64::INFINITY,
        LossKind::Logistic => 1.0f64.max(p.q.sqrt()).max(p.b.abs()),
    };
    let step = if curvature > 0.0 {
        (gradient / curvature).clamp(-cap, cap)
    } else {
        0.0
    };
    Ok(Channel {
        hat_q: spec.alpha * hat_q,
        hat_v: spec.alpha * curvature,
        hat_m,
        b: p.b + step,
    })
}

// Square loss: every ζ-expectation is explicit.
fn channel_square(p: &OrderParams, spec: &ProblemSpec, nodes: &DeltaNodes) -> Channel {
    let v = p.v;
    let (mut e1, mut e_d1, mut e_d2, mut e_dd2) = (0.0, 0.0, 0.0, 0.0);
    for (d, w) in nodes.iter() {
        let s = 1.0 / (1.0 + v * d);
        e1 += w * s;
        e_d1 += w * d * s;
        e_d2 += w * d * s * s;
        e_dd2 += w * d * d * s * s;
    }
    let m = p.m();
    let mut residual_sq = 0.0;
    let mut hat_m = [0.0; 2];
    let mut b = 0.0;
    for (k, (y, rho)) in spec.classes().into_iter().enumerate() {
        let r = y - m[k] - p.b;
        residual_sq += rho * r * r;
        hat_m[k] = spec.alpha * rho * r * e1;
        b += rho * (y - m[k]);
    }
    Channel {
        hat_q: spec.alpha * (residual_sq * e_d2 + p.q * e_dd2),
        hat_v: spec.alpha * e_d1,
        hat_m,
        b,
    }
}

// Ridge prior: closed forms in the input conjugates.
fn prior(p: &OrderParams, spec: &ProblemSpec, lambda: f64) -> (f64, f64, [f64; 2]) {
    let g = &spec.geometry.gram;
    let hm = p.hat_m();
    let denom = lambda + p.hat_v;
    let m = [
        (hm[0] * g[0][0] + hm[1] * g[1][0]) / denom,
        (hm[0] * g[0][1] + hm[1] * g[1][1]) / denom,
    ];
    let signal: f64 = (0..2)
        .flat_map(|k| (0..2).map(move |j| hm[k] * hm[j] * g[k][j]))
        .sum();
    let q = (signal + p.hat_q) / (denom * denom);
    (1.0 / denom, q, m)
}

fn assemble(p: &OrderParams, spec: &ProblemSpec, lambda: f64, ch: Channel) -> OrderParams {
    let (v, q, m) = prior(p, spec, lambda);
    OrderParams {
        m_plus: m[0],
        m_minus: m[1],
        q,
        v,
        b: ch.b,
        hat_q: ch.hat_q,
        hat_v: ch.hat_v,
        hat_m_plus: ch.hat_m[0],
        hat_m_minus: ch.hat_m[1],
    }
}

/// One synchronous closed-form update for square loss with ridge, using the
/// default `Δ` quadrature.
pub fn se_update_ridge_square(p: &OrderParams, spec: &ProblemSpec) -> Result<OrderParams> {
    se_update_ridge_square_with(p, spec, &spec.variance.quadrature_nodes(0))
}

/// [`se_update_ridge_square`] on a caller-supplied `Δ` node set.
pub fn se_update_ridge_square_with(
    p: &OrderParams,
    spec: &ProblemSpec,
    nodes: &DeltaNodes,
) -> Result<OrderParams> {
    if spec.loss != LossKind::Square {
        return Err(Error::Config("closed-form update requires square loss".into()));
    }
    check_params(p)?;
    let out = assemble(p, spec, spec.lambda, channel_square(p, spec, nodes));
    check_params(&out)?;
    Ok(out)
}

/// One synchronous update for any loss, with prox-based channel expectations.
pub fn se_update_general(p: &OrderParams, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<OrderParams> {
    se_update_general_with(p, spec, &ChannelQuadrature::new(&spec.variance, cfg))
}

/// [`se_update_general`] on a prebuilt quadrature.
pub fn se_update_general_with(
    p: &OrderParams,
    spec: &ProblemSpec,
    quad: &ChannelQuadrature,
) -> Result<OrderParams> {
    check_params(p)?;
    let out = assemble(p, spec, spec.effective_lambda(), channel_general(p, spec, quad)?);
    check_params(&out)?;
    Ok(out)
}

/// Fixed point of the state evolution.
///
/// For the general channel a safeguarded Newton method first runs on the
/// reduced map `(m±, ln q, ln v, b) ↦ prior(channel(·))`, whose fixed points are
/// those of the full system. The damped iteration `p ← (1−γ)U(p) + γp` then
/// starts from its result (or from the configured start) and decides
/// convergence: the returned parameters are the last iterate `p` for which one
/// more update moved nothing by more than `tol`, and, unless that move is
/// already at the noise floor, the distance to the fixed point extrapolated
/// from the contraction rate of the last two residuals is below `tol` too.
pub fn solve_se(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<SEResult> {
    spec.validate()?;
    cfg.validate()?;
    let quad = ChannelQuadrature::new(&spec.variance, cfg);
    let fast = cfg.square_fast_path && spec.loss == LossKind::Square;
    let update = |p: &OrderParams| {
        if fast {
            se_update_ridge_square_with(p, spec, &quad.delta)
        } else {
            se_update_general_with(p, spec, &quad)
        }
    };

    let mut p = match cfg.init {
        Some(init) => init,
        None => {
            let mut p = OrderParams::default();
            let ch = if fast {
                channel_square(&p, spec, &quad.delta)
            } else {
                channel_general(&p, spec, &quad)?
            };
            p.hat_q = ch.hat_q;
            p.hat_v = ch.hat_v;
            p.hat_m_plus = ch.hat_m[0];
            p.hat_m_minus = ch.hat_m[1];
            p
        }
    };
    let mut evaluations = 0;
    if cfg.newton && !fast {
        let (refined, used) = newton_refine(&p, spec, &quad, cfg);
        p = refined;
        evaluations = used;
    }
    let mut clamps = 0;
    let mut residual = f64::INFINITY;
    let mut previous = f64::INFINITY;
    for iteration in 1..=cfg.max_iter {
        let next = update(&p)?;
        residual = p.max_change(&next);
        // A slowly contracting map moves little per step while still far from
        // its fixed point; scale the step by the observed contraction rate.
        let rate = if previous.is_finite() { residual / previous } else { 1.0 };
        previous = residual;
        let distance = residual * (1.0 - cfg.damping) / (1.0 - rate.min(1.0));
        if residual <= cfg.tol && (residual <= NOISE_FLOOR * cfg.tol || distance <= cfg.tol) {
            return Ok(SEResult {
                params: p,
                converged: true,
                iterations: evaluations + iteration,
                residual,
                clamps,
            });
        }
        let g = cfg.damping;
        let mut mixed = OrderParams::from_array(std::array::from_fn(|i| {
            (1.0 - g) * next.to_array()[i] + g * p.to_array()[i]
        }));
        if mixed.v < V_FLOOR {
            mixed.v = V_FLOOR;
            clamps += 1;
        }
        if mixed.q < 0.0 {
            mixed.q = 0.0;
            clamps += 1;
        }
        p = mixed;
    }
    Ok(SEResult {
        params: p,
        converged: false,
        iterations: evaluations + cfg.max_iter,
        residual,
        clamps,
    })
}

const NOISE_FLOOR: f64 = 1e-3;
const NEWTON_MAX_STEPS: usize = 60;
// Largest Newton move of ln q or ln v in one step.
const NEWTON_MAX_LOG_STEP: f64 = 3.0;

// Reduced coordinates y = (m₊, m₋, ln q, ln v, b) and the map y ↦ y' through
// one channel pass and the ridge prior. Returns the full parameter set too.
fn reduced_map(y: &[f64; 5], spec: &ProblemSpec, quad: &ChannelQuadrature) -> Option<([f64; 5], OrderParams)> {
    let p = OrderParams {
        m_plus: y[0],
        m_minus: y[1],
        q: y[2].exp(),
        v: y[3].exp(),
        b: y[4],
        ..OrderParams::default()
    };
    if !p.all_finite() {
        return None;
    }
    let ch = channel_general(&p, spec, quad).ok()?;
    let with_hats = OrderParams {
        hat_q: ch.hat_q,
        hat_v: ch.hat_v,
        hat_m_plus: ch.hat_m[0],
        hat_m_minus: ch.hat_m[1],
        ..p
    };
    let next = assemble(&with_hats, spec, spec.effective_lambda(), ch);
    let image = [next.m_plus, next.m_minus, next.q.ln(), next.v.ln(), next.b];
    image.iter().all(|x| x.is_finite()).then_some((image, with_hats))
}

fn scaled_residual(y: &[f64; 5], image: &[f64; 5]) -> [f64; 5] {
    std::array::from_fn(|i| {
        let scale = if i == 2 || i == 3 { 1.0 } else { y[i].abs().max(1.0) };
        (image[i] - y[i]) / scale
    })
}

fn merit(r: &[f64; 5]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>()
}

// Newton with finite-difference Jacobians and backtracking on the scaled
// residual. Returns the best point reached (with conjugates filled in) and the
// number of channel passes spent.
fn newton_refine(start: &OrderParams, spec: &ProblemSpec, quad: &ChannelQuadrature, cfg: &SolverConfig) -> (OrderParams, usize) {
    let mut evaluations = 0;
    if !(start.q > 0.0 && start.v > 0.0) {
        return (*start, evaluations);
    }
    let mut y = [start.m_plus, start.m_minus, start.q.ln(), start.v.ln(), start.b];
    let Some((mut image, mut full)) = reduced_map(&y, spec, quad) else {
        return (*start, evaluations);
    };
    evaluations += 1;
    for _ in 0..NEWTON_MAX_STEPS {
        let r = scaled_residual(&y, &image);
        let phi = merit(&r);
        if r.iter().all(|x| x.abs() <= NOISE_FLOOR * cfg.tol) {
            break;
        }
        let mut jac = DMatrix::zeros(5, 5);
        let mut ok = true;
        for j in 0..5 {
            let h = 1e-6 * y[j].abs().max(1.0);
            let mut yj = y;
            yj[j] += h;
            evaluations += 1;
            let Some((img, _)) = reduced_map(&yj, spec, quad) else {
                ok = false;
                break;
            };
            // Scale with the base point so the columns differentiate r(y).
            for i in 0..5 {
                let scale = if i == 2 || i == 3 { 1.0 } else { y[i].abs().max(1.0) };
                jac[(i, j)] = ((img[i] - yj[i]) / scale - r[i]) / h;
            }
        }
        let step = if ok {
            jac.lu().solve(&-DVector::from_row_slice(&r))
        } else {
            None
        };
        let Some(mut step) = step.filter(|s| s.iter().all(|x| x.is_finite())) else {
            break;
        };
        let log_move = step[2].abs().max(step[3].abs());
        if log_move > NEWTON_MAX_LOG_STEP {
            step *= NEWTON_MAX_LOG_STEP / log_move;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: [f64; 5] = std::array::from_fn(|i| y[i] + t * step[i]);
            evaluations += 1;
            if let Some((img, f)) = reduced_map(&trial, spec, quad) {
                if merit(&scaled_residual(&trial, &img)) < (1.0 - 1e-4 * t) * phi {
                    y = trial;
                    image = img;
                    full = f;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (full, evaluations)
}

/// Fixed point of the random-labels square-loss system (`m = b = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomLabelsResult {
    pub v: f64,
    pub q: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `v = 1/(λ+v̂)`, `q = q̂/(λ+v̂)²` with
/// `v̂ = αE[Δ/(1+vΔ)]` and `q̂ = αE[Δ/(1+vΔ)²] + αqE[Δ²/(1+vΔ)²]`.
pub fn solve_rl_square(
    alpha: f64,
    lambda: f64,
    model: &VarianceModel,
    cfg: &SolverConfig,
) -> Result<RandomLabelsResult> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    model.validate()?;
    cfg.validate()?;
    let nodes = model.nodes(&cfg.delta_method);
    let update = |v: f64, q: f64| {
        let (mut e_d1, mut e_d2, mut e_dd2) = (0.0, 0.0, 0.0);
        for (d, w) in nodes.iter() {
            let s = 1.0 / (1.0 + v * d);
            e_d1 += w * d * s;
            e_d2 += w * d * s * s;
            e_dd2 += w * d * d * s * s;
        }
        let hat_v = alpha * e_d1;
        let hat_q = alpha * (e_d2 + q * e_dd2);
        let denom = lambda + hat_v;
        (1.0 / denom, hat_q / (denom * denom))
    };
    let (mut v, mut q) = (1.0, 0.5);
    let mut residual = f64::INFINITY;
    for iteration in 1..=cfg.max_iter {
        let (nv, nq) = update(v, q);
        if !(nv.is_finite() && nq.is_finite()) {
            return Err(Error::Guard(format!("non-finite random-labels iterate v={nv}, q={nq}")));
        }
        residual = ((nv - v).abs() / v.abs().max(1.0)).max((nq - q).abs() / q.abs().max(1.0));
        if residual <= cfg.tol {
            return Ok(RandomLabelsResult {
                v,
                q,
                converged: true,
                iterations: iteration,
                residual,
            });
        }
        let g = cfg.damping;
        v = ((1.0 - g) * nv + g * v).max(V_FLOOR);
        q = ((1.0 - g) * nq + g * q).max(0.0);
    }
    Ok(RandomLabelsResult {
        v,
        q,
        converged: false,
        iterations: cfg.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(alpha: f64, lambda: f64) -> ProblemSpec {
        ProblemSpec::balanced(alpha, lambda, LossKind::Square, VarianceModel::PointMass { delta: 1.0 })
    }

    #[test]
    fn v_from_input_hat_v() {
        let p = OrderParams {
            hat_v: 1.0,
            ..OrderParams::default()
        };
        let out = se_update_ridge_square(&p, &gaussian(2.0, 1.0)).unwrap();
        assert_eq!(out.v, 0.5);
    }

    #[test]
    fn symmetric_inputs_stay_symmetric() {
        let p = OrderParams {
            m_plus: 0.3,
            m_minus: -0.3,
            q: 0.4,
            v: 0.7,
            b: 0.0,
            hat_q: 0.2,
            hat_v: 0.9,
            hat_m_plus: 0.25,
            hat_m_minus: -0.25,
        };
        for model in [
            VarianceModel::PointMass { delta: 1.0 },
            VarianceModel::InverseGamma { a: 2.0, c: 1.0 },
        ] {
            let spec = ProblemSpec::balanced(1.5, 0.1, LossKind::Square, model);
            let out = se_update_ridge_square(&p, &spec).unwrap();
            assert_relative_eq!(out.hat_m_plus, -out.hat_m_minus, epsilon = 1e-15);
            assert_eq!(out.b, 0.0);
        }
    }

    #[test]
    fn gaussian_fixed_point_v_is_one() {
        let res = solve_se(&gaussian(2.0, 1e-5), &SolverConfig::default()).unwrap();
        assert!(res.converged && res.residual <= 1e-5);
        assert!((res.params.v - 1.0).abs() < 1e-3, "v = {}", res.params.v);
    }

    #[test]
    fn square_closed_form_matches_delta_k_identities() {
        let model = VarianceModel::InverseGamma { a: 2.0, c: 1.0 };
        let nodes = model.quadrature_nodes(0);
        let v = 0.8;
        let d1 = nodes.delta_k(v, 1).unwrap();
        let d2 = nodes.delta_k(v, 2).unwrap();
        assert_relative_eq!(nodes.expect(|d| d / (1.0 + v * d)), (1.0 - d1) / v, max_relative = 1e-12);
        assert_relative_eq!(
            nodes.expect(|d| d / (1.0 + v * d).powi(2)),
            (d1 - d2) / v,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            nodes.expect(|d| (d / (1.0 + v * d)).powi(2)),
            (1.0 - 2.0 * d1 + d2) / (v * v),
            max_relative = 1e-10
        );
    }

    #[test]
    fn general_update_matches_closed_form() {
        let p = OrderParams {
            m_plus: 0.4,
            m_minus: -0.2,
            q: 0.6,
            v: 0.9,
            b: 0.05,
            hat_q: 0.3,
            hat_v: 1.2,
            hat_m_plus: 0.3,
            hat_m_minus: -0.4,
        };
        for model in [
            VarianceModel::PointMass { delta: 1.0 },
            VarianceModel::InverseGamma { a: 2.0, c: 1.0 },
            VarianceModel::Contaminated { r: 0.5, a: 0.5, c: 1.0 },
        ] {
            let mut spec = ProblemSpec::balanced(1.7, 0.3, LossKind::Square, model);
            spec.rho_plus = 0.3;
            let closed = se_update_ridge_square(&p, &spec).unwrap();
            let general = se_update_general(&p, &spec, &SolverConfig::default()).unwrap();
            let diff = closed.max_change(&general);
            assert!(diff < 1e-9, "{model:?}: {diff}");
        }
    }

    #[test]
    fn general_solve_matches_fast_path() {
        let spec = ProblemSpec::balanced(
            3.0,
            1e-2,
            LossKind::Square,
            VarianceModel::InverseGamma { a: 2.0, c: 1.0 },
        );
        let fast = solve_se(&spec, &SolverConfig::default()).unwrap();
        let slow = solve_se(
            &spec,
            &SolverConfig {
                square_fast_path: false,
                zeta_quadrature_nodes: 31,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        assert!(fast.converged && slow.converged);
        assert!(fast.params.max_change(&slow.params) < 1e-4);
    }

    #[test]
    fn newton_and_damped_iteration_agree() {
        let mut spec = ProblemSpec::balanced(
            1.5,
            0.1,
            LossKind::Logistic,
            VarianceModel::InverseGamma { a: 3.0, c: 2.0 },
        );
        spec.rho_plus = 0.3;
        let base = SolverConfig {
            zeta_quadrature_nodes: 31,
            tol: 1e-8,
            max_iter: 5000,
            ..SolverConfig::default()
        };
        let newton = solve_se(&spec, &base).unwrap();
        let damped = solve_se(&spec, &SolverConfig { newton: false, ..base }).unwrap();
        assert!(newton.converged && damped.converged);
        assert!(newton.iterations < damped.iterations);
        assert!(newton.params.max_change(&damped.params) < 1e-6, "{newton:?} {damped:?}");
        assert!(newton.params.b.abs() > 1e-3);
    }

    #[test]
    fn logistic_balanced_keeps_zero_bias() {
        let spec = ProblemSpec::balanced(
            2.0,
            1e-2,
            LossKind::Logistic,
            VarianceModel::InverseGamma { a: 2.0, c: 1.0 },
        );
        let p = OrderParams {
            m_plus: 0.5,
            m_minus: -0.5,
            q: 0.8,
            v: 2.0,
            b: 0.0,
            hat_q: 0.1,
            hat_v: 0.4,
            hat_m_plus: 0.2,
            hat_m_minus: -0.2,
        };
        let out = se_update_general(&p, &spec, &SolverConfig::default()).unwrap();
        assert!(out.b.abs() < 1e-12);
        assert!(out.hat_q >= 0.0 && out.hat_v >= 0.0);
    }

    #[test]
    fn near_gaussian_inverse_gamma_matches_point_mass() {
        let cfg = SolverConfig::default();
        let a = 1e4;
        let ig = ProblemSpec::balanced(
            2.0,
            1e-2,
            LossKind::Square,
            VarianceModel::InverseGamma { a, c: a - 1.0 },
        );
        let pm = gaussian(2.0, 1e-2);
        let x = solve_se(&ig, &cfg).unwrap();
        let y = solve_se(&pm, &cfg).unwrap();
        for (s, t) in x.params.to_array().iter().zip(y.params.to_array()) {
            assert!((s - t).abs() < 1e-2);
        }
    }

    #[test]
    fn vanishing_data_gives_vanishing_overlaps() {
        let res = solve_se(&gaussian(1e-4, 1.0), &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.params.m_plus.abs() < 1e-3 && res.params.m_minus.abs() < 1e-3);
        assert!(res.params.q < 1e-3);
    }

    #[test]
    fn random_labels_reductions() {
        let cfg = SolverConfig {
            tol: 1e-10,
            max_iter: 100_000,
            ..SolverConfig::default()
        };
        let pm = VarianceModel::PointMass { delta: 1.0 };
        let r = solve_rl_square(2.0, 1e-8, &pm, &cfg).unwrap();
        assert!(r.converged);
        assert!((r.v - 1.0).abs() < 1e-4 && (r.q - 1.0).abs() < 1e-4, "{r:?}");
        for model in [pm, VarianceModel::InverseGamma { a: 2.0, c: 1.0 }] {
            let r = solve_rl_square(3.0, 1e-7, &model, &cfg).unwrap();
            assert!((r.q / r.v - 1.0).abs() < 1e-3, "{model:?}: {r:?}");
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut spec = gaussian(2.0, 1.0);
        spec.rho_plus = 1.0;
        assert!(matches!(solve_se(&spec, &SolverConfig::default()), Err(Error::Config(_))));
        let p = OrderParams {
            v: 0.0,
            ..OrderParams::default()
        };
        assert!(matches!(
            se_update_ridge_square(&p, &gaussian(2.0, 1.0)),
            Err(Error::Guard(_))
        ));
        let cfg = SolverConfig {
            damping: 1.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rescaling_round_trip() {
        let p = OrderParams {
            m_plus: 2.0,
            m_minus: -3.0,
            q: 4.0,
            v: 10.0,
            b: 1.0,
            hat_q: 0.5,
            hat_v: 0.01,
            hat_m_plus: 0.2,
            hat_m_minus: -0.1,
        };
        let r = p.rescaled(0.1);
        assert_relative_eq!(r.v, 1.0);
        assert_relative_eq!(r.q, 0.04, epsilon = 1e-15);
        assert_relative_eq!(r.hat_v, 0.1);
        assert_relative_eq!(r.m_minus, -0.3, epsilon = 1e-15);
    }
}
