//! Independent reference computations used to cross-check the main
//! numerics: brute-force quadrature for φ and ψ, the Fourier form of the
//! wrapped Gaussian, an explicit fine-grid Fokker–Planck step, and a
//! bootstrap particle filter on the untransformed price.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{frac, ModelParams};
use crate::simulate::MarketPath;

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = Compensated::default();
    s.add(f(a));
    s.add(f(b));
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s.add(w * f(a + i as f64 * h));
    }
    s.value() * h / 3.0
}

fn richardson(coarse: f64, fine: f64) -> f64 {
    fine + (fine - coarse) / 15.0
}

fn psi_simpson(z: f64, n: usize) -> f64 {
    simpson(|y| (z * (y * y - y)).exp(), 0.0, 1.0, n)
}

fn phi_simpson(z: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let g = |y: f64| (z * (y - 0.5) * (y - 0.5)).exp();
    // inner integral at every node, one Simpson panel per cell
    let mut inner = vec![0.0; n + 1];
    let mut acc = Compensated::default();
    for i in 1..=n {
        let a = (i - 1) as f64 * h;
        let b = i as f64 * h;
        acc.add(h / 6.0 * (g(a) + 4.0 * g(0.5 * (a + b)) + g(b)));
        inner[i] = acc.value();
    }
    let outer = |i: usize| {
        let x = i as f64 * h;
        (-z * (x - 0.5) * (x - 0.5)).exp() * inner[i]
    };
    let mut s = Compensated::default();
    s.add(outer(0));
    s.add(outer(n));
    for i in 1..n {
        s.add(if i % 2 == 1 { 4.0 } else { 2.0 } * outer(i));
    }
    2.0 * s.value() * h / 3.0
}

/// φ(z) by nested composite Simpson with one Richardson step.
pub fn phi_oracle(z: f64) -> f64 {
    richardson(phi_simpson(z, 20_000), phi_simpson(z, 40_000))
}

/// ψ(z) by composite Simpson with one Richardson step.
pub fn psi_oracle(z: f64) -> f64 {
    richardson(psi_simpson(z, 20_000), psi_simpson(z, 40_000))
}

/// Cell masses of the stationary law exp(γx² − γx) on `bins` equal cells,
/// by per-cell Simpson and normalized by their total.
pub fn chi_cell_masses(gamma: f64, bins: usize) -> Vec<f64> {
    let h = 1.0 / bins as f64;
    let f = |x: f64| (gamma * (x * x - x)).exp();
    let masses: Vec<f64> = (0..bins)
        .map(|j| simpson(f, j as f64 * h, (j + 1) as f64 * h, 64))
        .collect();
    let mut total = Compensated::default();
    for m in &masses {
        total.add(*m);
    }
    let total = total.value();
    masses.into_iter().map(|m| m / total).collect()
}

/// Wrapped normal density via its Fourier series
/// 1 + 2 Σ_k exp(−2π²k²v) cos(2πkd).
pub fn wrapped_gaussian_theta(d: f64, var: f64) -> f64 {
    let mut s = 1.0;
    for k in 1.. {
        let a = (-2.0 * PI * PI * (k * k) as f64 * var).exp();
        if a < 1e-18 {
            break;
        }
        s += 2.0 * a * (2.0 * PI * k as f64 * d).cos();
    }
    s
}

/// One step of ∂u/∂t = ½A²∂²u − ∂(Cμ(x + κy)u) on a periodic grid of
/// `n` cells, explicit finite volumes with upwind fluxes. Input and output
/// are cell densities of length `n`.
pub fn fokker_planck_step(u0: &[f64], a2: f64, c: f64, kappa: f64, y: f64, dt: f64) -> Vec<f64> {
    let n = u0.len();
    let dx = 1.0 / n as f64;
    let max_speed = 0.5 * c.abs();
    let dt_stable = 0.4 / (a2 / (dx * dx) + max_speed / dx);
    let steps = (dt / dt_stable).ceil().max(1.0) as usize;
    let tau = dt / steps as f64;
    let speed: Vec<f64> = (0..n)
        .map(|i| c * (frac(i as f64 * dx + kappa * y) - 0.5))
        .collect();
    let mut u = u0.to_vec();
    let mut next = vec![0.0; n];
    let mut flux = vec![0.0; n];
    for _ in 0..steps {
        // flux through the left face of cell i
        for i in 0..n {
            let l = (i + n - 1) % n;
            let v = speed[i];
            let adv = if v > 0.0 { v * u[l] } else { v * u[i] };
            let diff = -0.5 * a2 * (u[i] - u[l]) / dx;
            flux[i] = adv + diff;
        }
        for i in 0..n {
            let r = (i + 1) % n;
            next[i] = u[i] - tau / dx * (flux[r] - flux[i]);
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}

/// Averages fine cell values onto a coarse grid whose cell count divides
/// the fine one.
pub fn coarsen(fine: &[f64], n_coarse: usize) -> Vec<f64> {
    let r = fine.len() / n_coarse;
    fine.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect()
}

/// Linear interpolation of coarse cell-center values onto a finer grid.
pub fn refine(coarse: &[f64], n_fine: usize) -> Vec<f64> {
    let n = coarse.len();
    (0..n_fine)
        .map(|i| {
            let x = (i as f64 + 0.5) / n_fine as f64;
            let pos = x * n as f64 - 0.5;
            let base = pos.floor();
            let w = pos - base;
            let i0 = (base as i64).rem_euclid(n as i64) as usize;
            (1.0 - w) * coarse[i0] + w * coarse[(i0 + 1) % n]
        })
        .collect()
}

/// L¹ distance Σ|a − b|/n between two densities on the same unit grid.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleConfig {
    pub n_particles: usize,
    pub dt_sim: f64,
    pub seed: u64,
    /// Resample when the effective sample size falls below this fraction.
    pub ess_fraction: f64,
}

impl ParticleConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            dt_sim: 0.01,
            seed,
            ess_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParticleOutput {
    /// E[μ(X_{t_i}) | observations up to t_i].
    pub mu: Vec<f64>,
    /// Final particle positions of X and their normalized weights.
    pub particles: Vec<f64>,
    pub weights: Vec<f64>,
    pub resamples: usize,
}

impl ParticleOutput {
    /// Weighted histogram of (X − κy) mod 1 as a density over `bins` cells.
    pub fn transformed_histogram(&self, kappa: f64, y: f64, bins: usize) -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for (x, w) in self.particles.iter().zip(&self.weights) {
            let b = ((frac(x - kappa * y) * bins as f64) as usize).min(bins - 1);
            h[b] += w * bins as f64;
        }
        h
    }
}

fn systematic_resample(particles: &[f64], weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = particles.len();
    let start: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let target = start + k as f64 / n as f64;
        while cum < target && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(particles[i]);
    }
    out
}

/// Bootstrap particle filter for X itself: particles follow Euler steps of
/// dX = αβμ(X)dt + σdB and are weighted by the Gaussian law of the flow
/// increment given the latent move, ΔY ~ N(ΔX/α, (σ̄² − σ²/α²)Δt).
/// X₀ mod 1 starts uniform.
pub fn particle_filter(path: &MarketPath, params: &ModelParams, cfg: &ParticleConfig) -> Result<ParticleOutput> {
    if path.is_empty() {
        return Err(Error::InvalidInput("empty path".into()));
    }
    let ratio = path.dt_obs / cfg.dt_sim;
    let sub = ratio.round() as usize;
    if sub == 0 || (ratio - sub as f64).abs() > 1e-9 * ratio {
        return Err(Error::InvalidConfig("dt_obs must be a multiple of dt_sim".into()));
    }
    let noise_var = params.idiosyncratic_flow_var() * path.dt_obs;
    if !(noise_var > 0.0) {
        return Err(Error::InvalidParams("particle filter needs sigma_bar2 > sigma2/alpha2".into()));
    }
    let n = cfg.n_particles;
    let drift = params.alpha * params.beta;
    let sd = (params.sigma2 * cfg.dt_sim).sqrt();
    let dt = cfg.dt_sim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut particles: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mut logw = vec![0.0; n];
    let mut weights = vec![1.0 / n as f64; n];
    let mean_mu = |p: &[f64], w: &[f64]| -> f64 { p.iter().zip(w).map(|(x, w)| (frac(*x) - 0.5) * w).sum() };
    let mut mu = vec![mean_mu(&particles, &weights)];
    let mut resamples = 0;
    let mut start = particles.clone();

    for i in 1..path.len() {
        let dy = path.order_flow[i] - path.order_flow[i - 1];
        start.copy_from_slice(&particles);
        let base_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
        particles
            .par_chunks_mut(1024)
            .enumerate()
            .for_each(|(chunk, ps)| {
                let mut r = ChaCha8Rng::seed_from_u64(base_seed);
                r.set_stream(((i as u64) << 32) | chunk as u64);
                for x in ps.iter_mut() {
                    for _ in 0..sub {
                        let z: f64 = r.sample(StandardNormal);
                        *x += drift * (frac(*x) - 0.5) * dt + sd * z;
                    }
                }
            });
        for k in 0..n {
            let resid = dy - (particles[k] - start[k]) / params.alpha;
            logw[k] += -0.5 * resid * resid / noise_var;
        }
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..n {
            weights[k] = (logw[k] - m).exp();
            total += weights[k];
        }
        for w in &mut weights {
            *w /= total;
        }
        mu.push(mean_mu(&particles, &weights));
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < cfg.ess_fraction * n as f64 {
            particles = systematic_resample(&particles, &weights, &mut rng);
            logw.iter_mut().for_each(|l| *l = 0.0);
            weights.iter_mut().for_each(|w| *w = 1.0 / n as f64);
            resamples += 1;
        }
    }
    Ok(ParticleOutput {
        mu,
        particles,
        weights,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_oracles_at_zero() {
        assert!((phi_oracle(0.0) - 1.0).abs() < 1e-12);
        assert!((psi_oracle(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_matches_erf_free_series() {
        // ψ(z) = Σ_k z^k/k! ∫(y²−y)^k, with ∫(y²−y)^k = (−1)^k (k!)²/(2k+1)!
        let z: f64 = 0.7;
        let mut s = 0.0;
        let mut coef = 1.0;
        for k in 0..40 {
            if k > 0 {
                coef *= -(k as f64) / ((2 * k) as f64 * (2 * k + 1) as f64) * z;
            }
            s += coef;
        }
        assert!((psi_oracle(z) - s).abs() < 1e-12);
    }

    #[test]
    fn theta_series_integrates_to_one() {
        let n = 1000;
        let s: f64 = (0..n)
            .map(|i| wrapped_gaussian_theta((i as f64 + 0.5) / n as f64, 0.003))
            .sum::<f64>()
            / n as f64;
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fokker_planck_conserves_mass() {
        let u: Vec<f64> = (0..200).map(|i| 1.0 + 0.5 * (2.0 * PI * i as f64 / 200.0).sin()).collect();
        let out = fokker_planck_step(&u, 0.05, 0.3, 0.2, 1.3, 1.0);
        let m: f64 = out.iter().sum::<f64>() / 200.0;
        assert!((m - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn systematic_resampling_keeps_heavy_particle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = systematic_resample(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 0.0], &mut rng);
        assert_eq!(out, vec![2.0; 4]);
    }
}
