//! Euler–Maruyama simulation of (X, Y), quote projection, and the Monte-Carlo
//! exit-time estimator used to check Σ(θ) independently of quadrature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{bid_ask_unchecked, frac, mu_unchecked, ModelParams};

/// Observed quote and order-flow record on a regular time grid, optionally
/// carrying the simulated latent price.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub dt_obs: f64,
    pub times: Vec<f64>,
    pub order_flow: Vec<f64>,
    pub bid: Vec<i64>,
    pub ask: Vec<i64>,
    pub latent: Option<Vec<f64>>,
    pub meta: Option<SimMeta>,
}

/// Provenance of a simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMeta {
    pub seed: u64,
    pub params: ModelParams,
    pub dt_sim: f64,
    pub x0: InitialPrice,
}

impl MarketPath {
    pub fn empty(dt_obs: f64) -> Self {
        Self {
            dt_obs,
            times: Vec::new(),
            order_flow: Vec::new(),
            bid: Vec::new(),
            ask: Vec::new(),
            latent: None,
            meta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observation horizon T = t_{N−1} − t_0.
    pub fn horizon(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn midprice(&self, i: usize) -> f64 {
        0.5 * (self.bid[i] + self.ask[i]) as f64
    }

    /// Order-flow increments Y_{i+1} − Y_i.
    pub fn flow_increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.order_flow.windows(2).map(|w| w[1] - w[0])
    }

    /// Checks the structural invariants of a path. `eps` is needed to verify
    /// quotes against the latent price when one is present.
    pub fn validate(&self, eps: Option<f64>) -> Result<()> {
        let n = self.times.len();
        if self.order_flow.len() != n || self.bid.len() != n || self.ask.len() != n {
            return Err(Error::InvalidInput("series lengths differ".into()));
        }
        if let Some(latent) = &self.latent {
            if latent.len() != n {
                return Err(Error::InvalidInput("latent series length differs".into()));
            }
        }
        if !(self.dt_obs > 0.0) {
            return Err(Error::InvalidInput(format!("dt_obs must be positive, got {}", self.dt_obs)));
        }
        if n > 0 && self.order_flow[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "order flow must start at 0, got {}",
                self.order_flow[0]
            )));
        }
        for i in 0..n {
            let width = self.ask[i] - self.bid[i];
            if !(width == 1 || width == 2) {
                return Err(Error::InvalidInput(format!(
                    "row {i}: spread {} not in {{1, 2}} (bid {}, ask {})",
                    width, self.bid[i], self.ask[i]
                )));
            }
        }
        if let (Some(latent), Some(eps)) = (&self.latent, eps) {
            for (i, &x) in latent.iter().enumerate() {
                if bid_ask_unchecked(x, eps) != (self.bid[i], self.ask[i]) {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: quotes ({}, {}) inconsistent with latent price {x}",
                        self.bid[i], self.ask[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Initial latent price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPrice {
    Fixed(f64),
    /// Uniform over `[cell, cell + 1)`.
    UniformInCell(i64),
}

impl Default for InitialPrice {
    fn default() -> Self {
        InitialPrice::Fixed(100.5)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ModelParams,
    pub horizon: f64,
    pub dt_sim: f64,
    pub dt_obs: f64,
    pub seed: u64,
    pub x0: InitialPrice,
}

impl SimConfig {
    pub fn new(params: ModelParams, horizon: f64, seed: u64) -> Self {
        Self {
            params,
            horizon,
            dt_sim: 0.01,
            dt_obs: 1.0,
            seed,
            x0: InitialPrice::default(),
        }
    }

    pub fn with_dt_sim(mut self, dt_sim: f64) -> Self {
        self.dt_sim = dt_sim;
        self
    }

    pub fn with_x0(mut self, x0: InitialPrice) -> Self {
        self.x0 = x0;
        self
    }

    /// Returns (observations after t = 0, Euler steps per observation).
    fn grid(&self) -> Result<(usize, usize)> {
        self.params.validate()?;
        if !(self.dt_sim > 0.0) || !(self.dt_obs > 0.0) || !(self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need dt_sim > 0, dt_obs > 0, horizon >= 0 (got {}, {}, {})",
                self.dt_sim, self.dt_obs, self.horizon
            )));
        }
        if self.dt_sim > self.dt_obs {
            return Err(Error::InvalidConfig(format!(
                "dt_sim = {} exceeds dt_obs = {}",
                self.dt_sim, self.dt_obs
            )));
        }
        let sub = integer_ratio(self.dt_obs, self.dt_sim)
            .ok_or_else(|| Error::InvalidConfig("dt_obs must be an integer multiple of dt_sim".into()))?;
        let n_obs = integer_ratio(self.horizon, self.dt_obs)
            .ok_or_else(|| Error::InvalidConfig("horizon must be an integer multiple of dt_obs".into()))?;
        if let InitialPrice::Fixed(x) = self.x0 {
            if !x.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite initial price {x}")));
            }
        }
        Ok((n_obs, sub))
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let k = r.round();
    ((r - k).abs() <= 1e-9 * r.abs().max(1.0)).then_some(k as usize)
}

/// Runs the Euler scheme, calling `on_obs(step, x, y)` at every observation
/// instant (including t = 0) and `on_sub(x)` after every Euler step.
fn run_euler<O, S>(cfg: &SimConfig, mut on_obs: O, mut on_sub: S) -> Result<f64>
where
    O: FnMut(usize, f64, f64),
    S: FnMut(f64),
{
    let (n_obs, sub) = cfg.grid()?;
    let p = &cfg.params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = match cfg.x0 {
        InitialPrice::Fixed(x) => x,
        InitialPrice::UniformInCell(cell) => cell as f64 + rng.gen::<f64>(),
    };
    let x_start = x;
    let mut y = 0.0;
    let drift = p.alpha * p.beta;
    let sd_x = (p.sigma2 * cfg.dt_sim).sqrt();
    let sd_w = (p.idiosyncratic_flow_var() * cfg.dt_sim).sqrt();
    let inv_alpha = 1.0 / p.alpha;

    on_obs(0, x, y);
    for k in 1..=n_obs {
        for _ in 0..sub {
            let xi: f64 = rng.sample(StandardNormal);
            let zeta: f64 = rng.sample(StandardNormal);
            let dx = drift * mu_unchecked(x) * cfg.dt_sim + sd_x * xi;
            x += dx;
            y += dx * inv_alpha + sd_w * zeta;
            on_sub(x);
        }
        on_obs(k, x, y);
    }
    Ok(x_start)
}

/// Simulates (X, Y) and records quotes at every multiple of `dt_obs`.
pub fn simulate_path(cfg: &SimConfig) -> Result<MarketPath> {
    let (n_obs, _) = cfg.grid()?;
    let n = n_obs + 1;
    let eps = cfg.params.eps;
    let mut path = MarketPath {
        dt_obs: cfg.dt_obs,
        times: Vec::with_capacity(n),
        order_flow: Vec::with_capacity(n),
        bid: Vec::with_capacity(n),
        ask: Vec::with_capacity(n),
        latent: Some(Vec::with_capacity(n)),
        meta: None,
    };
    let latent = path.latent.as_mut().expect("latent allocated");
    let x0 = run_euler(
        cfg,
        |k, x, y| {
            let (b, a) = bid_ask_unchecked(x, eps);
            path.times.push(k as f64 * cfg.dt_obs);
            path.order_flow.push(y);
            path.bid.push(b);
            path.ask.push(a);
            latent.push(x);
        },
        |_| {},
    )?;
    path.meta = Some(SimMeta {
        seed: cfg.seed,
        params: cfg.params,
        dt_sim: cfg.dt_sim,
        x0: match cfg.x0 {
            InitialPrice::UniformInCell(_) => InitialPrice::Fixed(x0),
            fixed => fixed,
        },
    });
    Ok(path)
}

/// Normalized occupation histogram of X mod 1 over every Euler step of a
/// simulation, as a density on `bins` equal cells of [0, 1).
pub fn occupation_density(cfg: &SimConfig, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    run_euler(cfg, |_, _, _| {}, |x| {
        let j = ((frac(x) * bins as f64) as usize).min(bins - 1);
        counts[j] += 1;
    })?;
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidConfig("horizon too short for an occupation histogram".into()));
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 * bins as f64 / total as f64)
        .collect())
}

#[derive(Debug, Clone)]
pub struct ExitTimeConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    /// Paths still inside (−1, 1) at this time are stopped and counted.
    pub time_cap: f64,
    /// Test for excursions between grid points using the Brownian-bridge
    /// crossing probability.
    pub bridge_correction: bool,
}

impl ExitTimeConfig {
    pub fn new(n_paths: usize, dt_sim: f64, seed: u64) -> Self {
        Self {
            n_paths,
            dt_sim,
            seed,
            time_cap: 1e6,
            bridge_correction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitTimeEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    /// Paths that hit the time cap; they enter the mean at the cap value.
    pub n_capped: usize,
}

/// Monte-Carlo mean of the first time |X| reaches 1 starting from X₀ = 0.
/// Equals 1/Σ(θ) in the model.
pub fn mean_exit_time_mc(params: &ModelParams, n_paths: usize, dt_sim: f64, seed: u64) -> Result<ExitTimeEstimate> {
    mean_exit_time_with(params, &ExitTimeConfig::new(n_paths, dt_sim, seed))
}

pub fn mean_exit_time_with(params: &ModelParams, cfg: &ExitTimeConfig) -> Result<ExitTimeEstimate> {
    params.validate()?;
    if cfg.n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    if !(cfg.dt_sim > 0.0) || !(cfg.time_cap > 0.0) {
        return Err(Error::InvalidConfig("dt_sim and time_cap must be positive".into()));
    }
    let samples: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            exit_time_path(params, cfg, &mut rng)
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ExitTimeEstimate {
        mean,
        std_err: (var / n).sqrt(),
        n_paths: samples.len(),
        n_capped: samples.iter().filter(|s| s.1).count(),
    })
}

fn exit_time_path(p: &ModelParams, cfg: &ExitTimeConfig, rng: &mut ChaCha8Rng) -> (f64, bool) {
    let dt = cfg.dt_sim;
    let drift = p.alpha * p.beta;
    let sd = (p.sigma2 * dt).sqrt();
    let two_over_var = 2.0 / (p.sigma2 * dt);
    let mut x = 0.0f64;
    let mut t = 0.0;
    while t < cfg.time_cap {
        let xi: f64 = rng.sample(StandardNormal);
        let x1 = x + drift * mu_unchecked(x) * dt + sd * xi;
        if x1.abs() >= 1.0 {
            let barrier = x1.signum();
            let frac_step = ((barrier - x) / (x1 - x)).clamp(0.0, 1.0);
            return (t + frac_step * dt, false);
        }
        if cfg.bridge_correction {
            let p_up = (-(1.0 - x) * (1.0 - x1) * two_over_var).exp();
            let p_dn = (-(1.0 + x) * (1.0 + x1) * two_over_var).exp();
            if rng.gen::<f64>() < p_up + p_dn {
                return (t + 0.5 * dt, false);
            }
        }
        x = x1;
        t += dt;
    }
    (cfg.time_cap, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 2.0, 0.5, 1.0, 0.1).unwrap()
    }

    #[test]
    fn same_seed_same_path() {
        let cfg = SimConfig::new(params(), 50.0, 7);
        let a = simulate_path(&cfg).unwrap();
        let b = simulate_path(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&SimConfig::new(params(), 50.0, 8)).unwrap();
        assert_ne!(a.order_flow, c.order_flow);
    }

    #[test]
    fn path_shape_and_invariants() {
        let cfg = SimConfig::new(params(), 200.0, 1).with_x0(InitialPrice::UniformInCell(50));
        let path = simulate_path(&cfg).unwrap();
        assert_eq!(path.len(), 201);
        assert_eq!(path.order_flow[0], 0.0);
        assert_eq!(path.times[200], 200.0);
        path.validate(Some(0.1)).unwrap();
        let x0 = path.latent.as_ref().unwrap()[0];
        assert!((50.0..51.0).contains(&x0));
        assert_eq!(path.meta.as_ref().unwrap().x0, InitialPrice::Fixed(x0));
    }

    #[test]
    fn config_rejections() {
        let p = params();
        assert!(simulate_path(&SimConfig::new(p, 10.5, 0)).is_err());
        assert!(simulate_path(&SimConfig::new(p, 10.0, 0).with_dt_sim(0.03)).is_err());
        assert!(simulate_path(&SimConfig::new(p, 10.0, 0).with_dt_sim(2.0)).is_err());
        assert!(simulate_path(&SimConfig::new(p, 10.0, 0).with_x0(InitialPrice::Fixed(f64::NAN))).is_err());
        assert!(mean_exit_time_mc(&p, 0, 0.01, 0).is_err());
    }

    #[test]
    fn zero_horizon_gives_single_point() {
        let path = simulate_path(&SimConfig::new(params(), 0.0, 3)).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.horizon(), 0.0);
    }

    #[test]
    fn validate_catches_bad_quotes() {
        let mut path = simulate_path(&SimConfig::new(params(), 5.0, 3)).unwrap();
        path.validate(Some(0.1)).unwrap();
        path.bid[2] -= 5;
        assert!(path.validate(None).is_err());
    }

    #[test]
    fn occupation_density_integrates_to_one() {
        let cfg = SimConfig::new(params(), 100.0, 5);
        let h = occupation_density(&cfg, 20).unwrap();
        let mass: f64 = h.iter().sum::<f64>() / 20.0;
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_time_is_reproducible() {
        let p = params();
        let a = mean_exit_time_mc(&p, 64, 0.01, 11).unwrap();
        let b = mean_exit_time_mc(&p, 64, 0.01, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_capped, 0);
    }

    #[test]
    fn exit_time_cap_counts() {
        let p = ModelParams::new(1.0, 0.0, 1e-4, 1.0, 0.1).unwrap();
        let mut cfg = ExitTimeConfig::new(8, 0.01, 2);
        cfg.time_cap = 1.0;
        let est = mean_exit_time_with(&p, &cfg).unwrap();
        assert_eq!(est.n_capped, 8);
        assert!((est.mean - 1.0).abs() < 0.011);
    }
}
