//! End-to-end estimation on one observed path: σ̄², Σ̂, the candidate grid,
//! the likelihood grid search and finally ε̂.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::EstimationResult;
use crate::likelihood::{grid_search_mle, Axis, MleConfig, ParamGrid};
use crate::moments::{estimate_epsilon, estimate_sigma_bar2, estimate_sigma_hat, SigmaHatConfig};
use crate::simulate::MarketPath;

#[derive(Debug, Clone, Default)]
pub struct EstimateConfig {
    /// Known σ̄²; estimated from quadratic variation when absent.
    pub sigma_bar2: Option<f64>,
    pub sigma_hat: SigmaHatConfig,
    /// Grid axes; data-driven defaults when absent.
    pub alpha2_axis: Option<Axis>,
    pub sigma2_axis: Option<Axis>,
    pub mle: MleConfig,
    /// Provenance entries copied into the result.
    pub provenance: BTreeMap<String, String>,
}

pub fn estimate(path: &MarketPath, cfg: &EstimateConfig) -> Result<EstimationResult> {
    if path.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 observations, got {}", path.len())));
    }
    let sigma_bar2_hat = match cfg.sigma_bar2 {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidConfig(format!("sigma_bar2 must be positive, got {s}"))),
        None => estimate_sigma_bar2(path)?,
    };
    if !(sigma_bar2_hat > 0.0) {
        return Err(Error::InvalidInput("order flow has zero quadratic variation".into()));
    }
    let sigma_hat = estimate_sigma_hat(path, cfg.sigma_hat)?;
    if !(sigma_hat > 0.0) {
        return Err(Error::InvalidInput("midprice never moves across blocks; Sigma_hat = 0".into()));
    }
    let m_blocks = cfg.sigma_hat.blocks(path.horizon());

    let (default_a, default_s) = ParamGrid::default_axes(sigma_bar2_hat, sigma_hat)?;
    let a_axis = cfg.alpha2_axis.unwrap_or(default_a);
    let s_axis = cfg.sigma2_axis.unwrap_or(default_s);
    let grid = ParamGrid::from_axes(a_axis, s_axis, sigma_bar2_hat, sigma_hat);
    let mle = grid_search_mle(path, &grid, &cfg.mle)?;
    let theta = mle.theta_hat;

    let gamma_hat = theta.params.gamma();
    let eps = estimate_epsilon(path, gamma_hat)?;

    let mut config = cfg.provenance.clone();
    config.insert("grid_alpha2".into(), a_axis.to_string());
    config.insert("grid_sigma2".into(), s_axis.to_string());
    config.insert("m_blocks".into(), m_blocks.to_string());
    config.insert(
        "sigma_bar2_source".into(),
        if cfg.sigma_bar2.is_some() { "known" } else { "estimated" }.into(),
    );
    config.insert("filter_cells".into(), cfg.mle.filter.grid.n_cells().to_string());
    config.insert("filter_splitting".into(), format!("{:?}", cfg.mle.filter.splitting).to_lowercase());
    config.insert("likelihood_route".into(), format!("{:?}", cfg.mle.route).to_lowercase());

    Ok(EstimationResult {
        n_obs: path.len(),
        horizon: path.horizon(),
        sigma_bar2_hat,
        sigma_hat,
        m_blocks,
        alpha2_hat: theta.alpha2,
        beta_hat: theta.beta,
        sigma2_hat: theta.sigma2,
        max_loglik: mle.max_loglik,
        ties: mle.ties.iter().map(|c| (c.alpha2, c.sigma2)).collect(),
        eps_hat: eps.eps,
        eps_clamped: eps.clamped,
        wide_fraction: eps.wide_fraction,
        n_candidates: mle.surface.len(),
        excluded: mle.excluded,
        kernel_builds: mle.kernel_builds,
        runtime_secs: mle.runtime.as_secs_f64(),
        config,
        surface: mle.surface,
    })
}
