//! Normal-distribution helpers and fixed quadrature rules.

use libm::erfc;
use nalgebra::DMatrix;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, `Φ(x) = ½ erfc(−x/√2)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail, `Φ̂(x) = 1 − Φ(x) = ½ erfc(x/√2)`.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Gauss–Hermite rule for expectations over a standard normal variable.
///
/// Nodes and weights are for the probabilists' weight `e^{−ζ²/2}/√(2π)`, so
/// the weights sum to one and `Σ wᵢ f(ζᵢ) ≈ E[f(ζ)]`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let (nodes, weights) = probabilists_hermite(n);
        GaussHermite { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
// probabilists' Hermite recurrence (off-diagonal √k), weights the squared
// first eigenvector components. Nodes come out in decreasing order.
fn probabilists_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Exact symmetry about zero.
    for k in 0..n / 2 {
        let x = 0.5 * (pairs[k].0 - pairs[n - 1 - k].0);
        let w = 0.5 * (pairs[k].1 + pairs[n - 1 - k].1);
        pairs[k] = (x, w);
        pairs[n - 1 - k] = (-x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Trapezoid rule on the real line for a log-density known up to a constant.
///
/// Returns nodes `y` on `[lo, hi]` with spacing `h` and weights proportional
/// to `exp(log_density(y))`, normalised to sum to one. For densities that are
/// analytic in a strip around the real axis the rule converges
/// exponentially in `1/h`.
pub(crate) fn log_space_trapezoid<F: Fn(f64) -> f64>(
    log_density: F,
    lo: f64,
    hi: f64,
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let steps = ((hi - lo) / h).ceil().max(1.0) as usize;
    let h = (hi - lo) / steps as f64;
    let ys: Vec<f64> = (0..=steps).map(|i| lo + h * i as f64).collect();
    let logs: Vec<f64> = ys.iter().map(|&y| log_density(y)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut ws: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = ws.iter().sum();
    ws.iter_mut().for_each(|w| *w /= total);
    (ys, ws)
}

/// Adaptive Simpson integration of `f` on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}
