//! Square and logistic losses and their scalar proximal operators.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROX_TOL: f64 = 1e-12;
const PROX_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `ℓ(y, η) = ½(y − η)²`
    Square,
    /// `ℓ(y, η) = ln(1 + e^{−yη})`
    Logistic,
}

/// Proximal point `h` and scaled residual `f = (h − ω)/κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    pub h: f64,
    pub f: f64,
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid `1/(1 + e^{−x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Second derivative of the logistic loss, `1 / (4 cosh²(η/2))`.
pub fn logistic_curvature(eta: f64) -> f64 {
    let s = sigmoid(eta.abs());
    s * (1.0 - s)
}

impl LossKind {
    pub fn value(self, y: f64, eta: f64) -> f64 {
        match self {
            LossKind::Square => 0.5 * (y - eta).powi(2),
            LossKind::Logistic => softplus(-y * eta),
        }
    }

    /// `∂ℓ/∂η`
    pub fn derivative(self, y: f64, eta: f64) -> f64 {
        match self {
            LossKind::Square => eta - y,
            LossKind::Logistic => -y * sigmoid(-y * eta),
        }
    }

    /// `∂²ℓ/∂η²`
    pub fn curvature(self, _y: f64, eta: f64) -> f64 {
        match self {
            LossKind::Square => 1.0,
            LossKind::Logistic => logistic_curvature(eta),
        }
    }

    /// `argmin_u (u − ω)²/(2κ) + ℓ(y, u)`.
    pub fn prox(self, y: f64, omega: f64, kappa: f64, tol: f64) -> Result<ProxResult> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Domain(format!("prox needs 0 < kappa < inf, got {kappa}")));
        }
        match self {
            LossKind::Square => Ok(ProxResult {
                h: (omega + kappa * y) / (1.0 + kappa),
                f: (y - omega) / (1.0 + kappa),
            }),
            LossKind::Logistic => {
                let h = scalar_prox(self, y, omega, kappa, tol)?;
                Ok(ProxResult {
                    h,
                    f: -self.derivative(y, h),
                })
            }
        }
    }
}

/// Pointwise loss value.
pub fn loss(kind: LossKind, y: f64, eta: f64) -> f64 {
    kind.value(y, eta)
}

/// Proximal operator with the default tolerance.
pub fn prox(kind: LossKind, y: f64, omega: f64, kappa: f64) -> Result<ProxResult> {
    kind.prox(y, omega, kappa, DEFAULT_PROX_TOL)
}

// Safeguarded Newton on g(u) = (u − ω)/κ + ℓ′(u), strictly increasing.
// Valid for losses with |ℓ′| ≤ 1, whose root lies in [ω − κ, ω + κ]. A
// bisection step replaces Newton whenever Newton leaves the bracket or fails
// to halve the previous step.
fn scalar_prox(kind: LossKind, y: f64, omega: f64, kappa: f64, tol: f64) -> Result<f64> {
    let g = |u: f64| (u - omega) / kappa + kind.derivative(y, u);
    let mut lo = omega - kappa;
    let mut hi = omega + kappa;
    // Start at the minimiser of the problem with ℓ linearised around ω.
    let mut u = omega - kappa * kind.derivative(y, omega) / (1.0 + kappa * kind.curvature(y, omega));
    if !(u > lo && u < hi) {
        u = 0.5 * (lo + hi);
    }
    let mut last_step = hi - lo;
    for _ in 0..PROX_MAX_ITER {
        let gu = g(u);
        if gu.abs() <= tol {
            return Ok(u);
        }
        if gu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        if hi - lo <= 4.0 * f64::EPSILON * u.abs().max(1.0) {
            return Ok(u);
        }
        let step = gu / (1.0 / kappa + kind.curvature(y, u));
        let next = u - step;
        if next > lo && next < hi && 2.0 * step.abs() <= last_step {
            last_step = step.abs();
            u = next;
        } else {
            last_step = 0.5 * (hi - lo);
            u = lo + last_step;
        }
    }
    Err(Error::Solver(format!(
        "prox did not converge (y={y}, omega={omega}, kappa={kappa})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn objective(kind: LossKind, y: f64, omega: f64, kappa: f64, u: f64) -> f64 {
        (u - omega).powi(2) / (2.0 * kappa) + kind.value(y, u)
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(LossKind::Square, 1.0, 1.0), 0.0);
        assert_relative_eq!(loss(LossKind::Logistic, 1.0, 0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(loss(LossKind::Logistic, -1.0, -3.0), 0.048_587_351_573_742, epsilon = 1e-12);
        assert!(loss(LossKind::Logistic, 1.0, -800.0).is_finite());
    }

    #[test]
    fn prox_examples() {
        let p = prox(LossKind::Square, 1.0, 0.0, 1.0).unwrap();
        assert_eq!((p.h, p.f), (0.5, 0.5));
        let p = prox(LossKind::Square, 1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(p.h, 1.25, epsilon = 1e-15);
        assert_relative_eq!(p.f, -0.25, epsilon = 1e-15);

        // Bisection oracle on u = 1/(1 + eᵘ).
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - 1.0 / (1.0 + mid.exp()) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let p = prox(LossKind::Logistic, 1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(p.h, lo, epsilon = 1e-12);
        assert!((p.h - 0.4010).abs() < 1e-4);

        let p = prox(LossKind::Logistic, 1.0, 30.0, 1.0).unwrap();
        assert!((p.h - 30.0).abs() < 1e-12 && p.f.abs() < 1e-12);
        assert!(prox(LossKind::Logistic, 1.0, 0.0, 0.0).is_err());
        // Plain Newton cycles on this input.
        let p = prox(LossKind::Logistic, 1.0, -3.304_386_692_101_036_5, 18.673_795_929_207_174).unwrap();
        assert!(((p.h + 3.304_386_692_101_036_5) / 18.673_795_929_207_174 - p.f).abs() < 1e-12);
        let p = prox(LossKind::Logistic, -1.0, 1e25, 1e30).unwrap();
        assert!(p.h.is_finite());
        assert!(prox(LossKind::Square, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn logistic_residual_signs() {
        // f = −ℓ′(h): positive for y = +1, negative for y = −1.
        for &omega in &[-20.0, -1.0, 0.0, 3.0, 40.0] {
            let p = prox(LossKind::Logistic, 1.0, omega, 2.0).unwrap();
            assert!(p.f > 0.0 && p.f <= 1.0);
            let p = prox(LossKind::Logistic, -1.0, omega, 2.0).unwrap();
            assert!(p.f < 0.0 && p.f >= -1.0);
        }
    }

    #[test]
    fn curvature_values() {
        assert_eq!(logistic_curvature(0.0), 0.25);
        let c = 1.0 / (4.0 * (5.0f64).cosh().powi(2));
        assert_relative_eq!(logistic_curvature(10.0), c, max_relative = 1e-12);
        assert_eq!(logistic_curvature(10.0), logistic_curvature(-10.0));
        assert!((logistic_curvature(10.0) - 4.54e-5).abs() < 1e-7);
        assert!(logistic_curvature(800.0) < 1e-300);
    }

    #[test]
    fn prox_grid_dominance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for kind in [LossKind::Square, LossKind::Logistic] {
            for _ in 0..1000 {
                let y = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let omega = rng.gen_range(-20.0..20.0);
                let kappa = 10f64.powf(rng.gen_range(-3.0..3.0));
                let p = prox(kind, y, omega, kappa).unwrap();
                let best = objective(kind, y, omega, kappa, p.h);
                let width = 0.1 * kappa.max(1e-2);
                for i in -200..=200 {
                    let u = p.h + width * i as f64 / 200.0;
                    assert!(objective(kind, y, omega, kappa, u) - best >= -1e-9);
                }
            }
        }
    }

    #[test]
    fn square_matches_generic_prox() {
        for &(y, omega, kappa) in &[(1.0, 0.0, 1.0), (-1.0, 0.3, 0.2), (1.0, -0.7, 0.9), (-1.0, -1.0, 0.05)] {
            let closed = prox(LossKind::Square, y, omega, kappa).unwrap();
            // |ℓ′| is unbounded for the square loss, so widen the bracket: the
            // root is within κ·|y − ω| of ω.
            let generic = {
                let g = |u: f64| (u - omega) / kappa + (u - y);
                let (mut lo, mut hi) = (omega - kappa * (y - omega).abs() - 1.0, omega + kappa * (y - omega).abs() + 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                lo
            };
            assert!((closed.h - generic).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn stationarity_and_odd_symmetry(omega in -50.0..50.0f64, log_kappa in -4.0..4.0f64, pos in any::<bool>()) {
            let kappa = 10f64.powf(log_kappa);
            let y = if pos { 1.0 } else { -1.0 };
            for kind in [LossKind::Square, LossKind::Logistic] {
                let p = prox(kind, y, omega, kappa).unwrap();
                let station = (p.h - omega) / kappa + kind.derivative(y, p.h);
                prop_assert!(station.abs() <= 1e-9 * (1.0 + omega.abs() / kappa));
                let m = prox(kind, -y, -omega, kappa).unwrap();
                prop_assert!((m.h + p.h).abs() <= 1e-10 * p.h.abs().max(1.0));
                prop_assert!((kind.value(y, omega) - kind.value(-y, -omega)).abs() < 1e-14);
            }
        }

        #[test]
        fn prox_is_monotone(a in -30.0..30.0f64, gap in 0.0..5.0f64, log_kappa in -3.0..3.0f64) {
            let kappa = 10f64.powf(log_kappa);
            for kind in [LossKind::Square, LossKind::Logistic] {
                let lo = prox(kind, 1.0, a, kappa).unwrap().h;
                let hi = prox(kind, 1.0, a + gap, kappa).unwrap().h;
                prop_assert!(hi >= lo - 1e-12);
            }
        }
    }
}
