//! Adaptive composite Gauss–Legendre quadrature.
//!
//! Each panel is integrated with an `n`-point Gauss–Legendre rule and compared
//! against the sum over its two halves; panels are bisected until the
//! difference falls below the tolerance allotted to them.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
const DEFAULT_ORDER: usize = 10;
const DEFAULT_MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    abs_tol: f64,
    max_depth: u32,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER, DEFAULT_ABS_TOL)
    }
}

impl Quadrature {
    /// `order`-point Gauss–Legendre panels refined to absolute tolerance `abs_tol`.
    pub fn new(order: usize, abs_tol: f64) -> Self {
        assert!(order >= 2, "Gauss-Legendre order must be at least 2");
        assert!(abs_tol > 0.0, "tolerance must be positive");
        let (nodes, weights) = gauss_legendre(order);
        Self {
            nodes,
            weights,
            abs_tol,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }

    pub fn with_max_depth(mut self, max_depth: u32) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn abs_tol(&self) -> f64 {
        self.abs_tol
    }

    /// Nodes and weights of the underlying rule on [-1, 1].
    pub fn rule(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.weights)
    }

    pub fn integrate<F>(&self, mut f: F, lo: f64, hi: f64) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.try_integrate(|x| Ok(f(x)), lo, hi)
    }

    /// Integrates a fallible integrand; the first integrand error aborts the
    /// whole computation. Used for nested integrals.
    pub fn try_integrate<F>(&self, mut f: F, lo: f64, hi: f64) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        self.try_integrate_pieces(&mut f, &[lo, hi])
    }

    /// Integrates over consecutive segments `[breaks[i], breaks[i+1]]`,
    /// splitting the tolerance in proportion to segment length.
    pub fn integrate_pieces<F>(&self, mut f: F, breaks: &[f64]) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.try_integrate_pieces(&mut |x| Ok(f(x)), breaks)
    }

    pub fn try_integrate_pieces<F>(&self, f: &mut F, breaks: &[f64]) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if breaks.len() < 2 {
            return Ok(0.0);
        }
        let total = (breaks[breaks.len() - 1] - breaks[0]).abs();
        if total == 0.0 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a == b {
                continue;
            }
            let tol = self.abs_tol * (b - a).abs() / total;
            let whole = self.panel(f, a, b)?;
            sum += self.adapt(f, a, b, whole, tol, 0)?;
        }
        Ok(sum)
    }

    fn panel<F>(&self, f: &mut F, a: f64, b: f64) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x)?;
        }
        Ok(acc * half)
    }

    fn adapt<F>(&self, f: &mut F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let m = 0.5 * (a + b);
        let left = self.panel(f, a, m)?;
        let right = self.panel(f, m, b)?;
        let refined = left + right;
        let estimate = (refined - whole).abs();
        // Below this the comparison only measures rounding noise.
        let floor = 64.0 * f64::EPSILON * refined.abs();
        if estimate <= tol.max(floor) {
            return Ok(refined);
        }
        if depth >= self.max_depth {
            return Err(Error::Quadrature {
                lo: a,
                hi: b,
                estimate,
                tolerance: tol,
            });
        }
        Ok(self.adapt(f, a, m, left, 0.5 * tol, depth + 1)?
            + self.adapt(f, m, b, right, 0.5 * tol, depth + 1)?)
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_positive_and_sum_to_two() {
        for n in [2, 5, 10, 16] {
            let (x, w) = gauss_legendre(n);
            assert!(w.iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn constant_over_unit_interval() {
        let q = Quadrature::default();
        assert_abs_diff_eq!(q.integrate(|_| 1.0, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(s, 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn sharp_peak_refines() {
        let q = Quadrature::default();
        let a = 400.0;
        let v = q.integrate(|x| (-a * x * x).exp(), -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, (PI / a).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn non_convergence_is_reported() {
        let q = Quadrature::new(4, 1e-14).with_max_depth(2);
        let err = q.integrate(|x| x.abs().sqrt().sin() / x.abs().max(1e-300), -1.0, 1.0);
        assert!(matches!(err, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn pieces_match_single_interval() {
        let q = Quadrature::default();
        let one = q.integrate(|x| x.exp(), 0.0, 2.0).unwrap();
        let two = q.integrate_pieces(|x| x.exp(), &[0.0, 0.5, 2.0]).unwrap();
        assert_abs_diff_eq!(one, two, epsilon = 1e-12);
        assert_abs_diff_eq!(one, 2f64.exp() - 1.0, epsilon = 1e-12);
    }
}
