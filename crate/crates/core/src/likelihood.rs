//! Log-likelihood of a quote/order-flow path, moment-constrained β, and the
//! exhaustive grid-search MLE over (α², σ²).

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{kernel_builds, run_filter_with, FilterConfig, ZakaiFilter};
use crate::model::{log_phi, ModelParams};
use crate::simulate::MarketPath;

/// How log L_T is accumulated from the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodRoute {
    /// Riemann sums of the likelihood integrals over the normalized filter's
    /// conditional micro-drift.
    #[default]
    Normalized,
    /// Sum of the logs of the per-step observation normalizers.
    Zakai,
}

/// −(β²/2σ̄²) Σ μ_i² Δt + (β/σ̄²) Σ μ_i ΔY_i over consecutive observations,
/// using `mu[i]` at the left endpoint of each interval.
pub fn log_likelihood_from_mu(mu: &[f64], order_flow: &[f64], dt: f64, beta: f64, sigma_bar2: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (m, w) in mu.iter().zip(order_flow.windows(2)) {
        quad += m * m;
        lin += m * (w[1] - w[0]);
    }
    -beta * beta / (2.0 * sigma_bar2) * quad * dt + beta / sigma_bar2 * lin
}

/// log L_T(θ) for a path under `params`, through a fresh filter.
pub fn log_likelihood(path: &MarketPath, params: &ModelParams, cfg: &FilterConfig) -> Result<f64> {
    log_likelihood_route(path, params, cfg, LikelihoodRoute::Normalized)
}

pub fn log_likelihood_route(
    path: &MarketPath,
    params: &ModelParams,
    cfg: &FilterConfig,
    route: LikelihoodRoute,
) -> Result<f64> {
    params.validate()?;
    if params.beta == 0.0 {
        return Ok(0.0);
    }
    let filter = ZakaiFilter::from_config(*params, cfg)?;
    log_likelihood_with(&filter, path, cfg, route)
}

fn log_likelihood_with(filter: &ZakaiFilter, path: &MarketPath, cfg: &FilterConfig, route: LikelihoodRoute) -> Result<f64> {
    let p = filter.params();
    if p.beta == 0.0 {
        return Ok(0.0);
    }
    let out = run_filter_with(filter, path, cfg)?;
    Ok(match route {
        LikelihoodRoute::Normalized => {
            log_likelihood_from_mu(&out.mu, &path.order_flow, path.dt_obs, p.beta, p.sigma_bar2)
        }
        LikelihoodRoute::Zakai => out.zakai_log_likelihood(),
    })
}

const GAMMA_REL_TOL: f64 = 1e-10;
const GAMMA_MAX: f64 = 1e6;

/// Ratio γ = αβ/σ² such that φ(γ) = σ²/Σ̂, for σ² > Σ̂.
pub fn invert_gamma(sigma2: f64, sigma_hat: f64) -> Result<f64> {
    if !(sigma2 > sigma_hat) || !(sigma_hat > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need sigma2 > Sigma_hat > 0, got sigma2 = {sigma2}, Sigma_hat = {sigma_hat}"
        )));
    }
    let target = (sigma2 / sigma_hat).ln();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while log_phi(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > GAMMA_MAX {
            return Err(Error::Bracket(format!(
                "Sigma_hat = {sigma_hat} is below sigma2/phi({GAMMA_MAX:e}) for sigma2 = {sigma2}"
            )));
        }
    }
    while hi - lo > GAMMA_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if log_phi(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The β ≥ 0 solving Σ(α, β, σ²) = Σ̂, or `None` if (α², σ²) admits none
/// (σ² < Σ̂ or σ² ≥ α²σ̄²). σ² = Σ̂ gives the boundary value β = 0.
pub fn invert_beta(alpha2: f64, sigma2: f64, sigma_bar2: f64, sigma_hat: f64) -> Result<Option<f64>> {
    if !(alpha2 > 0.0 && sigma2 > 0.0 && sigma_hat > 0.0 && sigma_bar2 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "invert_beta needs positive inputs, got alpha2 = {alpha2}, sigma2 = {sigma2}, sigma_bar2 = {sigma_bar2}, Sigma_hat = {sigma_hat}"
        )));
    }
    if sigma2 >= alpha2 * sigma_bar2 || sigma2 < sigma_hat {
        return Ok(None);
    }
    if sigma2 == sigma_hat {
        return Ok(Some(0.0));
    }
    let gamma = invert_gamma(sigma2, sigma_hat)?;
    Ok(Some(gamma * sigma2 / alpha2.sqrt()))
}

/// Equidistant axis `min:max:n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if n == 0 || !min.is_finite() || !max.is_finite() || min > max || (n > 1 && min == max) {
            return Err(Error::InvalidConfig(format!("bad axis {min}:{max}:{n}")));
        }
        Ok(Self { min, max, n })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.min + i as f64 * step).collect()
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("axis must be min:max:n, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let min = parts[0].trim().parse().map_err(|_| bad())?;
        let max = parts[1].trim().parse().map_err(|_| bad())?;
        let n = parts[2].trim().parse().map_err(|_| bad())?;
        Axis::new(min, max, n)
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.n)
    }
}

/// Candidate set Θ: a rectangle in (α², σ²) with β implied by Σ(θ) = Σ̂.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub alpha2: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub sigma_bar2: f64,
    pub sigma_hat: f64,
    /// ε carried into candidate parameters; plays no role in the likelihood.
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub alpha2: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub params: ModelParams,
}

impl Candidate {
    fn key(&self) -> (f64, f64) {
        (self.alpha2, self.sigma2)
    }
}

impl ParamGrid {
    pub fn from_axes(alpha2: Axis, sigma2: Axis, sigma_bar2: f64, sigma_hat: f64) -> Self {
        Self {
            alpha2: alpha2.values(),
            sigma2: sigma2.values(),
            sigma_bar2,
            sigma_hat,
            eps: 0.0,
        }
    }

    /// Data-driven default rectangle: α² ∈ [1.02, 16]·Σ̂/σ̄² and
    /// σ² ∈ [1.01 Σ̂, 0.99 α²_max σ̄²], 100 points each.
    pub fn default_axes(sigma_bar2: f64, sigma_hat: f64) -> Result<(Axis, Axis)> {
        let a_min = 1.02 * sigma_hat / sigma_bar2;
        let a_max = 16.0 * sigma_hat / sigma_bar2;
        let s_min = 1.01 * sigma_hat;
        let s_max = 0.99 * a_max * sigma_bar2;
        Ok((Axis::new(a_min, a_max, 100)?, Axis::new(s_min, s_max, 100)?))
    }

    /// Admissible candidates and the number of excluded (α², σ²) pairs.
    pub fn candidates(&self) -> Result<(Vec<Candidate>, usize)> {
        if !(self.sigma_hat > 0.0) || !(self.sigma_bar2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid needs Sigma_hat > 0 and sigma_bar2 > 0, got {} and {}",
                self.sigma_hat, self.sigma_bar2
            )));
        }
        // γ depends on σ² only; invert once per σ² value
        let gammas: Vec<Option<f64>> = self
            .sigma2
            .par_iter()
            .map(|&s2| {
                if s2 > self.sigma_hat {
                    invert_gamma(s2, self.sigma_hat).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        let mut excluded = 0;
        for &a2 in &self.alpha2 {
            for (&s2, &gamma) in self.sigma2.iter().zip(&gammas) {
                let gamma = match gamma {
                    Some(g) if a2 > 0.0 && s2 < a2 * self.sigma_bar2 => g,
                    _ => {
                        excluded += 1;
                        continue;
                    }
                };
                let beta = gamma * s2 / a2.sqrt();
                match ModelParams::from_alpha2(a2, beta, s2, self.sigma_bar2, self.eps) {
                    Ok(params) if beta > 0.0 => out.push(Candidate {
                        alpha2: a2,
                        sigma2: s2,
                        beta,
                        params,
                    }),
                    _ => excluded += 1,
                }
            }
        }
        Ok((out, excluded))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub alpha2: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct MleConfig {
    pub filter: FilterConfig,
    pub route: LikelihoodRoute,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            route: LikelihoodRoute::Normalized,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub theta_hat: Candidate,
    pub max_loglik: f64,
    /// One entry per retained candidate, in (α², σ²) lexicographic order.
    pub surface: Vec<SurfacePoint>,
    /// All candidates attaining the maximum (including θ̂).
    pub ties: Vec<Candidate>,
    pub excluded: usize,
    pub runtime: Duration,
    /// Kernel tables built during the search.
    pub kernel_builds: usize,
}

/// Exhaustive maximization of log L_T over the admissible grid candidates.
pub fn grid_search_mle(path: &MarketPath, grid: &ParamGrid, cfg: &MleConfig) -> Result<MleResult> {
    let (candidates, excluded) = grid.candidates()?;
    search_candidates(path, candidates, excluded, cfg)
}

/// Maximizes over an explicit candidate list. Ties are resolved toward the
/// lexicographically smallest (α², σ²), independent of input order.
pub fn search_candidates(
    path: &MarketPath,
    mut candidates: Vec<Candidate>,
    excluded: usize,
    cfg: &MleConfig,
) -> Result<MleResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyGrid { excluded });
    }
    candidates.sort_by(|a, b| a.key().partial_cmp(&b.key()).expect("finite grid coordinates"));
    let start = Instant::now();
    let builds_before = kernel_builds();
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let wrap = |e: Error| Error::Candidate {
                alpha2: c.alpha2,
                sigma2: c.sigma2,
                source: Box::new(e),
            };
            let filter = ZakaiFilter::from_config(c.params, &cfg.filter).map_err(wrap)?;
            let ll = log_likelihood_with(&filter, path, &cfg.filter, cfg.route).map_err(wrap)?;
            if ll.is_nan() {
                return Err(wrap(Error::FilterBreakdown {
                    step: 0,
                    t: 0.0,
                    reason: "log-likelihood is NaN".into(),
                    density: Vec::new(),
                }));
            }
            Ok(ll)
        })
        .collect::<Result<_>>()?;
    let runtime = start.elapsed();
    let builds = kernel_builds() - builds_before;

    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<Candidate> = candidates
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v == max)
        .map(|(c, _)| *c)
        .collect();
    let surface = candidates
        .iter()
        .zip(&values)
        .map(|(c, &v)| SurfacePoint {
            alpha2: c.alpha2,
            sigma2: c.sigma2,
            beta: c.beta,
            loglik: v,
        })
        .collect();
    Ok(MleResult {
        theta_hat: ties[0],
        max_loglik: max,
        surface,
        ties,
        excluded,
        runtime,
        kernel_builds: builds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::big_sigma;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_computed_three_steps() {
        let mu = [0.1, -0.2, 0.0];
        let y = [0.0, 1.0, 0.0, 2.0];
        let ll = log_likelihood_from_mu(&mu, &y, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(ll, 0.275, epsilon = 1e-15);
    }

    #[test]
    fn zero_beta_zero_loglik() {
        assert_eq!(log_likelihood_from_mu(&[0.3, 0.1], &[0.0, 5.0, -1.0], 1.0, 0.0, 2.0), 0.0);
    }

    #[test]
    fn invert_beta_boundaries() {
        assert_eq!(invert_beta(1.0, 0.5, 1.0, 0.5).unwrap(), Some(0.0));
        assert_eq!(invert_beta(1.0, 0.4, 1.0, 0.5).unwrap(), None);
        assert_eq!(invert_beta(1.0, 1.0, 1.0, 0.5).unwrap(), None);
        assert!(invert_beta(-1.0, 0.4, 1.0, 0.5).is_err());
    }

    #[test]
    fn invert_beta_round_trip() {
        for (a2, s2, sb2, sh) in [(1.0, 0.5, 1.0, 0.3), (4.0, 1.0, 0.5, 0.05), (0.3, 0.2, 1.0, 0.19)] {
            let beta = invert_beta(a2, s2, sb2, sh).unwrap().unwrap();
            let p = ModelParams::from_alpha2(a2, beta, s2, sb2, 0.0).unwrap();
            assert_abs_diff_eq!(big_sigma(&p).unwrap(), sh, epsilon = 1e-8);
        }
    }

    #[test]
    fn invert_beta_decreasing_in_sigma_hat() {
        let mut last = f64::INFINITY;
        for i in 1..20 {
            let sh = 0.02 * i as f64;
            let b = invert_beta(2.0, 0.5, 1.0, sh).unwrap().unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn tiny_sigma_hat_gives_large_gamma() {
        let g = invert_gamma(1.0, 1e-300).unwrap();
        assert!(g > 1000.0 && g.is_finite());
        let back = log_phi(g).unwrap();
        assert!((back - 1e300f64.recip().ln().abs()).abs() < 1e-6 * back);
        assert!(invert_gamma(1.0, 2.0).is_err());
    }

    #[test]
    fn axis_parsing() {
        let a: Axis = "0.5:1.5:3".parse().unwrap();
        assert_eq!(a.values(), vec![0.5, 1.0, 1.5]);
        assert!("1:2".parse::<Axis>().is_err());
        assert!("2:1:3".parse::<Axis>().is_err());
        assert!("1:1:3".parse::<Axis>().is_err());
        assert_eq!("1:1:1".parse::<Axis>().unwrap().values(), vec![1.0]);
    }

    #[test]
    fn grid_excludes_inadmissible_pairs() {
        let grid = ParamGrid {
            alpha2: vec![0.5, 1.0],
            sigma2: vec![0.2, 0.6, 0.9],
            sigma_bar2: 1.0,
            sigma_hat: 0.3,
            eps: 0.1,
        };
        let (c, excluded) = grid.candidates().unwrap();
        // σ² = 0.2 ≤ Σ̂ excluded twice; σ² ∈ {0.6, 0.9} ≥ 0.5·1 excluded for α² = 0.5
        assert_eq!(excluded, 4);
        assert_eq!(c.len(), 2);
        for cand in c {
            assert!(cand.beta > 0.0);
            assert_abs_diff_eq!(big_sigma(&cand.params).unwrap(), 0.3, epsilon = 1e-8);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = ParamGrid {
            alpha2: vec![0.1],
            sigma2: vec![0.2],
            sigma_bar2: 1.0,
            sigma_hat: 0.3,
            eps: 0.0,
        };
        let path = MarketPath::empty(1.0);
        assert!(matches!(
            grid_search_mle(&path, &grid, &MleConfig::default()),
            Err(Error::EmptyGrid { excluded: 1 })
        ));
    }
}
