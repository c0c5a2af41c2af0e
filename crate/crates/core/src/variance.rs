//! Variance laws `ϱ(Δ)` for the superstatistical clouds.
//!
//! A cloud point is `x = μ + √Δ z` with `z` standard normal and `Δ ~ ϱ`.
//! Every expectation `E_Δ[·]` in the state evolution goes through
//! [`DeltaNodes`], a weighted node set built either from a deterministic
//! quadrature rule or from a fixed Monte Carlo sample.
//!
//! The inverse-gamma quadrature works in `y = ln(1/Δ)`, where `1/Δ` is
//! Gamma-distributed. The log-density `a·y − c·eʸ` is entire, so a plain
//! trapezoid rule in `y` converges exponentially for the smooth integrands
//! used here. Atoms (point masses, the contamination atom at `Δ = 1`) are
//! carried as single nodes and are never sampled.

use crate::error::{Error, Result};
use crate::quadrature::log_space_trapezoid;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

const SAMPLE_CHUNK: usize = 8192;
/// Log-density drop (nats) at which the quadrature range is truncated.
const TRUNCATION_NATS: f64 = 60.0;
const MAX_REFINEMENTS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceModel {
    /// `Δ ≡ delta`; Gaussian clouds.
    PointMass { delta: f64 },
    /// `ϱ(Δ) = cᵃ Δ^{−a−1} e^{−c/Δ} / Γ(a)`.
    InverseGamma { a: f64, c: f64 },
    /// `r·ϱ_{a,c} + (1 − r)·δ(Δ − 1)`.
    Contaminated { r: f64, a: f64, c: f64 },
}

/// First inverse and direct moments of `Δ`. Infinite moments are reported as
/// `f64::INFINITY` with the matching flag cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean_delta: f64,
    pub inv_mean: f64,
    pub inv_sq_mean: f64,
    pub mean_finite: bool,
    pub inv_mean_finite: bool,
    pub inv_sq_finite: bool,
}

/// How `Δ`-expectations are discretised inside iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DeltaMethod {
    /// Fixed sample of `samples` draws reused for every evaluation.
    MonteCarlo { samples: usize, seed: u64 },
    /// Deterministic rule; `refinement` halves the trapezoid step that many times.
    Quadrature { refinement: u32 },
}

impl Default for DeltaMethod {
    fn default() -> Self {
        DeltaMethod::Quadrature { refinement: 0 }
    }
}

/// Integrator choice for one-off expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    MonteCarlo { samples: usize, seed: u64 },
    /// Step-halving trapezoid until successive estimates agree to `tol`
    /// (relative for values above one).
    Quadrature { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub value: f64,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
}

/// Weighted nodes `(Δᵢ, wᵢ)` with `Σ wᵢ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaNodes {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DeltaNodes {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(d, w)| w * f(d)).sum()
    }

    /// Like [`expect`](Self::expect) but rejects non-finite integrand values.
    pub fn try_expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (d, w) in self.iter() {
            let value = f(d);
            if !value.is_finite() {
                return Err(Error::NonFinite { delta: d, value });
            }
            acc += w * value;
        }
        Ok(acc)
    }

    /// `δ_k = E[(1 + vΔ)^{−k}]`.
    pub fn delta_k(&self, v: f64, k: i32) -> Result<f64> {
        check_delta_k_args(v, k)?;
        Ok(self.expect(|d| (1.0 + v * d).powi(-k)).min(1.0))
    }

    fn point(delta: f64) -> Self {
        DeltaNodes {
            values: vec![delta],
            weights: vec![1.0],
        }
    }

    fn with_atom(mut self, scale: f64, atom: f64) -> Self {
        self.weights.iter_mut().for_each(|w| *w *= scale);
        let rest = 1.0 - scale;
        if rest > 0.0 {
            self.values.push(atom);
            self.weights.push(rest);
        }
        self
    }
}

fn check_delta_k_args(v: f64, k: i32) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("delta_k needs v >= 0, got {v}")));
    }
    if k != 1 && k != 2 {
        return Err(Error::Domain(format!("delta_k defined for k in {{1,2}}, got {k}")));
    }
    Ok(())
}

impl VarianceModel {
    /// Inverse-gamma law with `a = c + 1`, so that `E[Δ] = 1` (unit covariance).
    pub fn unit_covariance(a: f64) -> Result<Self> {
        if !(a > 1.0) {
            return Err(Error::Domain(format!(
                "unit-covariance family needs a > 1, got {a}"
            )));
        }
        Ok(VarianceModel::InverseGamma { a, c: a - 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
            }
        };
        match *self {
            VarianceModel::PointMass { delta } => positive("delta", delta),
            VarianceModel::InverseGamma { a, c } => {
                positive("a", a)?;
                positive("c", c)
            }
            VarianceModel::Contaminated { r, a, c } => {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Config(format!("r must lie in [0,1], got {r}")));
                }
                positive("a", a)?;
                positive("c", c)
            }
        }
    }

    /// Density of the continuous part at `delta`. Atoms are not included.
    pub fn density(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("density needs delta > 0, got {delta}")));
        }
        Ok(match *self {
            VarianceModel::PointMass { .. } => 0.0,
            VarianceModel::InverseGamma { a, c } => inv_gamma_density(a, c, delta),
            VarianceModel::Contaminated { r, a, c } => r * inv_gamma_density(a, c, delta),
        })
    }

    /// Cumulative distribution function, atoms included.
    pub fn cdf(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        let step = |at: f64| if delta >= at { 1.0 } else { 0.0 };
        match *self {
            VarianceModel::PointMass { delta: d0 } => step(d0),
            VarianceModel::InverseGamma { a, c } => gamma_ur(a, c / delta),
            VarianceModel::Contaminated { r, a, c } => {
                r * gamma_ur(a, c / delta) + (1.0 - r) * step(1.0)
            }
        }
    }

    /// One draw from `ϱ`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            VarianceModel::PointMass { delta } => delta,
            VarianceModel::InverseGamma { a, c } => draw_inv_gamma(a, c, rng),
            VarianceModel::Contaminated { r, a, c } => {
                if rng.gen::<f64>() < r {
                    draw_inv_gamma(a, c, rng)
                } else {
                    1.0
                }
            }
        }
    }

    /// `n` i.i.d. draws. Chunks of the output use independent ChaCha streams
    /// of the root seed, so the result does not depend on how chunks are
    /// scheduled.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        use rayon::prelude::*;
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|chunk| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(chunk as u64);
                let len = SAMPLE_CHUNK.min(n - chunk * SAMPLE_CHUNK);
                (0..len).map(move |_| self.draw(&mut rng)).collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn moments(&self) -> MomentReport {
        let (mean, inv, inv_sq) = match *self {
            VarianceModel::PointMass { delta } => (delta, 1.0 / delta, 1.0 / (delta * delta)),
            VarianceModel::InverseGamma { a, c } => inv_gamma_moments(a, c),
            VarianceModel::Contaminated { r, a, c } => {
                let (m, i, i2) = inv_gamma_moments(a, c);
                let mix = |x: f64| if r == 0.0 { 1.0 } else { r * x + (1.0 - r) };
                (mix(m), mix(i), mix(i2))
            }
        };
        MomentReport {
            mean_delta: mean,
            inv_mean: inv,
            inv_sq_mean: inv_sq,
            mean_finite: mean.is_finite(),
            inv_mean_finite: inv.is_finite(),
            inv_sq_finite: inv_sq.is_finite(),
        }
    }

    /// Node set for the requested discretisation.
    pub fn nodes(&self, method: &DeltaMethod) -> DeltaNodes {
        match *method {
            DeltaMethod::MonteCarlo { samples, seed } => self.mc_nodes(samples, seed),
            DeltaMethod::Quadrature { refinement } => self.quadrature_nodes(refinement),
        }
    }

    pub fn quadrature_nodes(&self, refinement: u32) -> DeltaNodes {
        match *self {
            VarianceModel::PointMass { delta } => DeltaNodes::point(delta),
            VarianceModel::InverseGamma { a, c } => inv_gamma_rule(a, c, refinement),
            VarianceModel::Contaminated { r, a, c } => {
                if r == 0.0 {
                    DeltaNodes::point(1.0)
                } else {
                    inv_gamma_rule(a, c, refinement).with_atom(r, 1.0)
                }
            }
        }
    }

    /// Fixed Monte Carlo nodes with equal weights. The contamination atom
    /// keeps its exact weight `1 − r`.
    pub fn mc_nodes(&self, samples: usize, seed: u64) -> DeltaNodes {
        let samples = samples.max(1);
        let draws = |a, c| {
            let values = VarianceModel::InverseGamma { a, c }.sample(samples, seed);
            DeltaNodes {
                weights: vec![1.0 / samples as f64; samples],
                values,
            }
        };
        match *self {
            VarianceModel::PointMass { delta } => DeltaNodes::point(delta),
            VarianceModel::InverseGamma { a, c } => draws(a, c),
            VarianceModel::Contaminated { r, a, c } => {
                if r == 0.0 {
                    DeltaNodes::point(1.0)
                } else {
                    draws(a, c).with_atom(r, 1.0)
                }
            }
        }
    }

    /// Estimate `E_Δ[f(Δ)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, method: Integrator) -> Result<Expectation> {
        match method {
            Integrator::MonteCarlo { samples, seed } => self.expect_mc(&f, samples, seed),
            Integrator::Quadrature { tol } => self.expect_quadrature(&f, tol),
        }
    }

    fn expect_mc<F: Fn(f64) -> f64>(&self, f: &F, samples: usize, seed: u64) -> Result<Expectation> {
        let (r, a, c) = match *self {
            VarianceModel::PointMass { delta } => {
                let value = DeltaNodes::point(delta).try_expect(f)?;
                return Ok(Expectation {
                    value,
                    std_error: Some(0.0),
                });
            }
            VarianceModel::InverseGamma { a, c } => (1.0, a, c),
            VarianceModel::Contaminated { r, a, c } => (r, a, c),
        };
        let samples = samples.max(2);
        let draws = VarianceModel::InverseGamma { a, c }.sample(samples, seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &d in &draws {
            let value = f(d);
            if !value.is_finite() {
                return Err(Error::NonFinite { delta: d, value });
            }
            sum += value;
            sum_sq += value * value;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        let atom = if r < 1.0 {
            let value = f(1.0);
            if !value.is_finite() {
                return Err(Error::NonFinite { delta: 1.0, value });
            }
            (1.0 - r) * value
        } else {
            0.0
        };
        Ok(Expectation {
            value: r * mean + atom,
            std_error: Some(r * (var / n).sqrt()),
        })
    }

    fn expect_quadrature<F: Fn(f64) -> f64>(&self, f: &F, tol: f64) -> Result<Expectation> {
        let mut previous = self.quadrature_nodes(0).try_expect(f)?;
        if matches!(self, VarianceModel::PointMass { .. })
            || matches!(self, VarianceModel::Contaminated { r, .. } if *r == 0.0)
        {
            return Ok(Expectation {
                value: previous,
                std_error: None,
            });
        }
        let mut change = f64::INFINITY;
        for level in 1..=MAX_REFINEMENTS {
            let current = self.quadrature_nodes(level).try_expect(f)?;
            change = (current - previous).abs();
            if change <= tol * current.abs().max(1.0) {
                return Ok(Expectation {
                    value: current,
                    std_error: None,
                });
            }
            previous = current;
        }
        Err(Error::Integration { tol, change })
    }

    /// `δ_k = E[(1 + vΔ)^{−k}]` on the default quadrature rule.
    pub fn delta_k(&self, v: f64, k: i32) -> Result<f64> {
        check_delta_k_args(v, k)?;
        self.quadrature_nodes(0).delta_k(v, k)
    }
}

fn inv_gamma_density(a: f64, c: f64, delta: f64) -> f64 {
    (a * c.ln() - ln_gamma(a) - (a + 1.0) * delta.ln() - c / delta).exp()
}

fn inv_gamma_moments(a: f64, c: f64) -> (f64, f64, f64) {
    let mean = if a > 1.0 { c / (a - 1.0) } else { f64::INFINITY };
    (mean, a / c, a * (a + 1.0) / (c * c))
}

fn draw_inv_gamma<R: Rng + ?Sized>(a: f64, c: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(a, 1.0).expect("validated shape");
    loop {
        let x = g.sample(rng);
        if x > 0.0 {
            return c / x;
        }
    }
}

/// Trapezoid rule in `y = ln(1/Δ)` for `InverseGamma(a, c)`.
fn inv_gamma_rule(a: f64, c: f64, refinement: u32) -> DeltaNodes {
    let log_density = |y: f64| a * y - c * y.exp();
    let mode = (a / c).ln();
    let peak = a * mode - a;
    let target = peak - TRUNCATION_NATS;
    let lo = bisect_level(&log_density, mode - TRUNCATION_NATS / a - 1.0, mode, target);
    let hi = bisect_level(
        &log_density,
        mode + (TRUNCATION_NATS / a + 1.0).ln() + 1.0,
        mode,
        target,
    );
    let spread = trigamma(a).sqrt();
    let h = (spread / 3.0).min(0.3) / f64::from(1u32 << refinement.min(20));
    let (ys, weights) = log_space_trapezoid(log_density, lo, hi, h);
    let values = ys.iter().map(|y| (-y).exp()).collect();
    DeltaNodes { values, weights }
}

// Finds y between `outer` (below target) and `inner` (above target) where
// log_density(y) == target.
fn bisect_level<F: Fn(f64) -> f64>(log_density: &F, mut outer: f64, mut inner: f64, target: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (outer + inner);
        if log_density(mid) < target {
            outer = mid;
        } else {
            inner = mid;
        }
        if (outer - inner).abs() < 1e-12 {
            break;
        }
    }
    outer
}

/// Trigamma function `ψ₁(x)` for `x > 0`.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 30.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use approx::assert_relative_eq;

    fn ig(a: f64, c: f64) -> VarianceModel {
        VarianceModel::InverseGamma { a, c }
    }

    #[test]
    fn density_values() {
        assert_relative_eq!(ig(1.0, 1.0).density(1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-14);
        assert_eq!(ig(3.0, 2.0).density(1e-6).unwrap(), 0.0);
        assert!(ig(3.0, 2.0).density(0.0).is_err());
        assert!(ig(3.0, 2.0).density(-1.0).is_err());
        assert_eq!(VarianceModel::PointMass { delta: 1.0 }.density(1.0).unwrap(), 0.0);
    }

    // Independent oracle: adaptive Simpson in u = ln Δ.
    fn simpson_mass(model: &VarianceModel) -> f64 {
        let f = |t: f64| {
            let d = t.exp();
            model.density(d).unwrap() * d
        };
        adaptive_simpson(&f, -60.0, 60.0, 1e-12)
    }

    #[test]
    fn density_normalisation_grid() {
        for &a in &[0.5, 1.0, 2.0, 5.0] {
            for &c in &[0.5, 1.0, 4.0] {
                let mass = simpson_mass(&ig(a, c));
                assert!((mass - 1.0).abs() < 1e-6, "a={a} c={c} mass={mass}");
            }
        }
        let mass = simpson_mass(&VarianceModel::Contaminated { r: 0.3, a: 0.5, c: 1.0 });
        assert!((mass - 0.3).abs() < 1e-6);
    }

    #[test]
    fn moments_closed_form() {
        let m = VarianceModel::PointMass { delta: 1.0 }.moments();
        assert_eq!((m.mean_delta, m.inv_mean, m.inv_sq_mean), (1.0, 1.0, 1.0));
        assert!(m.mean_finite && m.inv_mean_finite && m.inv_sq_finite);
        let m = ig(2.0, 1.0).moments();
        assert_eq!((m.mean_delta, m.inv_mean, m.inv_sq_mean), (1.0, 2.0, 6.0));
        let m = ig(0.5, 1.0).moments();
        assert!(m.mean_delta.is_infinite() && !m.mean_finite);
        assert!(m.inv_mean_finite && m.inv_sq_finite);
        let m = VarianceModel::Contaminated { r: 0.5, a: 0.5, c: 1.0 }.moments();
        assert!(!m.mean_finite);
        assert_relative_eq!(m.inv_mean, 0.5 * 0.5 + 0.5);
    }

    #[test]
    fn moments_match_quadrature_oracle() {
        // E[1/Δ] and E[1/Δ²] for InverseGamma(2,1) by Simpson.
        let model = ig(2.0, 1.0);
        let moment = |k: i32| {
            let f = |t: f64| {
                let d = t.exp();
                model.density(d).unwrap() * d * d.powi(-k)
            };
            adaptive_simpson(&f, -60.0, 60.0, 1e-12)
        };
        assert_relative_eq!(moment(1), 2.0, epsilon = 1e-7);
        assert_relative_eq!(moment(2), 6.0, epsilon = 1e-7);
        assert_relative_eq!(moment(-1), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn inverse_moment_jensen() {
        for model in [ig(0.5, 1.0), ig(2.0, 3.0), ig(7.0, 0.2)] {
            let m = model.moments();
            assert!(m.inv_sq_mean >= m.inv_mean * m.inv_mean);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_positive() {
        let model = ig(0.5, 1.0);
        let a = model.sample(20_000, 7);
        let b = model.sample(20_000, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|&d| d > 0.0));
        assert_ne!(a, model.sample(20_000, 8));
        assert_eq!(VarianceModel::PointMass { delta: 2.0 }.sample(5, 1), vec![2.0; 5]);
    }

    #[test]
    fn sample_mean_unit_covariance() {
        // InverseGamma(2,1) has infinite variance, so use a robust check:
        // the sample mean of 1/Δ (Gamma(2,1), sd √2) within 3 standard errors.
        let n = 1_000_000;
        let draws = ig(2.0, 1.0).sample(n, 11);
        let inv_mean = draws.iter().map(|d| 1.0 / d).sum::<f64>() / n as f64;
        assert!((inv_mean - 2.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt());
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn kolmogorov_smirnov_against_cdf() {
        for model in [ig(0.5, 1.0), ig(2.0, 1.0), ig(5.0, 4.0)] {
            let mut draws = model.sample(100_000, 3);
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = draws.len() as f64;
            let ks = draws
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let f = model.cdf(d);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.01, "{model:?}: KS = {ks}");
        }
    }

    #[test]
    fn quadrature_rule_reproduces_moments() {
        for (a, c) in [(0.5, 1.0), (2.0, 1.0), (5.0, 4.0), (1e4, 1e4 - 1.0)] {
            let nodes = ig(a, c).quadrature_nodes(0);
            let total: f64 = nodes.weights.iter().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            assert_relative_eq!(nodes.expect(|d| 1.0 / d), a / c, max_relative = 1e-10);
            assert_relative_eq!(
                nodes.expect(|d| 1.0 / (d * d)),
                a * (a + 1.0) / (c * c),
                max_relative = 1e-9
            );
            if a > 1.0 {
                assert_relative_eq!(nodes.expect(|d| d), c / (a - 1.0), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn expectation_examples() {
        let q = Integrator::Quadrature { tol: 1e-10 };
        let pm = VarianceModel::PointMass { delta: 2.0 };
        assert_eq!(pm.expect(|d| d, q).unwrap().value, 2.0);
        let inv = ig(2.0, 1.0).expect(|d| 1.0 / d, q).unwrap();
        assert_relative_eq!(inv.value, 2.0, epsilon = 1e-9);
        for model in [pm, ig(0.5, 1.0), VarianceModel::Contaminated { r: 0.4, a: 0.5, c: 1.0 }] {
            assert_relative_eq!(model.expect(|_| 1.0, q).unwrap().value, 1.0, epsilon = 1e-12);
        }
        let mc = ig(2.0, 1.0)
            .expect(|d| 1.0 / d, Integrator::MonteCarlo { samples: 100_000, seed: 5 })
            .unwrap();
        let se = mc.std_error.unwrap();
        assert!((mc.value - 2.0).abs() < 3.0 * se, "{mc:?}");
    }

    #[test]
    fn non_finite_integrand_names_delta() {
        let err = VarianceModel::PointMass { delta: 0.5 }
            .expect(|d| if d < 1.0 { f64::NAN } else { 1.0 }, Integrator::Quadrature { tol: 1e-8 })
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { delta, .. } if delta == 0.5));
    }

    #[test]
    fn delta_k_examples() {
        let pm = VarianceModel::PointMass { delta: 1.0 };
        assert_eq!(pm.delta_k(0.0, 1).unwrap(), 1.0);
        assert_eq!(ig(0.5, 1.0).delta_k(0.0, 1).unwrap(), 1.0);
        assert_relative_eq!(pm.delta_k(1.0, 1).unwrap(), 0.5);
        assert_relative_eq!(pm.delta_k(1.0, 2).unwrap(), 0.25);
        assert!(pm.delta_k(-0.1, 1).is_err());
        assert!(pm.delta_k(1.0, 3).is_err());

        // MC oracle for InverseGamma(2,1)
        let draws = ig(2.0, 1.0).sample(1_000_000, 99);
        let vals: Vec<f64> = draws.iter().map(|d| 1.0 / (1.0 + d)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = ig(2.0, 1.0).delta_k(1.0, 1).unwrap();
        assert!((exact - mean).abs() < 3.0 * (var / n).sqrt());
    }

    #[test]
    fn contamination_limits() {
        let q = Integrator::Quadrature { tol: 1e-11 };
        let f = |d: f64| 1.0 / (1.0 + 0.7 * d).powi(2) + (-d).exp();
        let pure = VarianceModel::Contaminated { r: 1.0, a: 2.0, c: 1.0 };
        assert_relative_eq!(
            pure.expect(f, q).unwrap().value,
            ig(2.0, 1.0).expect(f, q).unwrap().value,
            epsilon = 1e-12
        );
        let none = VarianceModel::Contaminated { r: 0.0, a: 0.5, c: 1.0 };
        assert_relative_eq!(
            none.expect(f, q).unwrap().value,
            VarianceModel::PointMass { delta: 1.0 }.expect(f, q).unwrap().value,
            epsilon = 1e-15
        );
    }

    #[test]
    fn trigamma_values() {
        assert_relative_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-12);
        assert_relative_eq!(trigamma(0.5), std::f64::consts::PI.powi(2) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_covariance_preset() {
        assert_eq!(VarianceModel::unit_covariance(2.0).unwrap(), ig(2.0, 1.0));
        assert!(VarianceModel::unit_covariance(1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(ig(0.0, 1.0).validate().is_err());
        assert!(VarianceModel::Contaminated { r: 1.5, a: 1.0, c: 1.0 }.validate().is_err());
        assert!(VarianceModel::PointMass { delta: f64::INFINITY }.validate().is_err());
        assert!(ig(0.5, 2.0).validate().is_ok());
    }
}
