//! Non-likelihood estimators: σ̄² from order-flow quadratic variation, Σ̂
//! from block increments of the midprice, and ε̂ from the time the spread
//! spends at two ticks.

use crate::error::{Error, Result};
use crate::model::StationaryDensity;
use crate::simulate::MarketPath;

/// σ̄² ≈ Σ (ΔY)² / T over consecutive observations.
pub fn estimate_sigma_bar2(path: &MarketPath) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations to estimate sigma_bar2, got {}",
            path.len()
        )));
    }
    let qv: f64 = path.flow_increments().map(|d| d * d).sum();
    Ok(qv / path.horizon())
}

/// Number of midprice blocks M used by Σ̂.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaHatConfig {
    /// M = ⌊√T⌋ (T in seconds).
    #[default]
    SqrtHorizon,
    Fixed(usize),
}

impl SigmaHatConfig {
    pub fn blocks(&self, horizon: f64) -> usize {
        match *self {
            SigmaHatConfig::SqrtHorizon => (horizon.sqrt().floor() as usize).max(1),
            SigmaHatConfig::Fixed(m) => m,
        }
    }
}

/// Σ̂ = (1/T) Σ_k (X̂_{kT/M} − X̂_{(k−1)T/M})² with X̂ the midprice; block
/// ends are snapped to the nearest observation.
pub fn estimate_sigma_hat(path: &MarketPath, cfg: SigmaHatConfig) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 observations to estimate Sigma".into()));
    }
    let horizon = path.horizon();
    let m = cfg.blocks(horizon);
    if m == 0 {
        return Err(Error::InvalidConfig("block count M must be at least 1".into()));
    }
    let block = horizon / m as f64;
    if block < path.dt_obs * (1.0 - 1e-9) {
        return Err(Error::InvalidConfig(format!(
            "M = {m} blocks of length {block} s is finer than the observation step {} s",
            path.dt_obs
        )));
    }
    let last = path.len() - 1;
    let index_at = |k: usize| -> usize {
        let i = ((k as f64 * block) / path.dt_obs).round() as usize;
        i.min(last)
    };
    let mut sum = 0.0;
    let mut prev = path.midprice(0);
    for k in 1..=m {
        let cur = path.midprice(index_at(k));
        sum += (cur - prev) * (cur - prev);
        prev = cur;
    }
    Ok(sum / horizon)
}

/// Fraction of observation intervals during which the spread is at least two
/// ticks (left-endpoint rule).
pub fn wide_spread_fraction(path: &MarketPath) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 observations".into()));
    }
    let n = path.len() - 1;
    let wide = (0..n).filter(|&i| path.ask[i] - path.bid[i] >= 2).count();
    Ok(wide as f64 / n as f64)
}

pub const EPS_MIN: f64 = 1e-4;
const EPS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsClamp {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonEstimate {
    pub eps: f64,
    /// Observed wide-spread fraction the estimate was matched to.
    pub wide_fraction: f64,
    pub clamped: Option<EpsClamp>,
}

/// ε̂ from a path: matches the observed wide-spread fraction to its
/// stationary value 2∫₀^ε χ(γ̂, x) dx.
pub fn estimate_epsilon(path: &MarketPath, gamma_hat: f64) -> Result<EpsilonEstimate> {
    epsilon_from_fraction(wide_spread_fraction(path)?, gamma_hat)
}

/// Solves 2∫₀^ε χ(γ, x) dx = f for ε by bisection on [ε_min, ½ − ε_min].
pub fn epsilon_from_fraction(fraction: f64, gamma_hat: f64) -> Result<EpsilonEstimate> {
    if !(gamma_hat >= 0.0) || !gamma_hat.is_finite() {
        return Err(Error::InvalidInput(format!("gamma_hat must be finite and >= 0, got {gamma_hat}")));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("spread fraction {fraction} outside [0, 1]")));
    }
    let chi = StationaryDensity::new(gamma_hat)?;
    let mut lo = EPS_MIN;
    let mut hi = 0.5 - EPS_MIN;
    if chi.wide_spread_mass(lo)? >= fraction {
        return Ok(EpsilonEstimate {
            eps: lo,
            wide_fraction: fraction,
            clamped: Some(EpsClamp::Lower),
        });
    }
    if chi.wide_spread_mass(hi)? <= fraction {
        return Ok(EpsilonEstimate {
            eps: hi,
            wide_fraction: fraction,
            clamped: Some(EpsClamp::Upper),
        });
    }
    while hi - lo > EPS_TOL {
        let mid = 0.5 * (lo + hi);
        if chi.wide_spread_mass(mid)? < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonEstimate {
        eps: 0.5 * (lo + hi),
        wide_fraction: fraction,
        clamped: None,
    })
}
