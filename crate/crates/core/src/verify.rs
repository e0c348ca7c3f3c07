//! Self-check battery: closed-form identities, Monte-Carlo and oracle
//! cross-checks, and desk-scale estimation experiments on simulated data.
//!
//! Every check reports its measured error next to the threshold it is held
//! to. [`Scale::Quick`] shrinks the expensive experiments (fewer seeds or
//! particles) without touching any threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::filter::{kernel_builds, run_filter, FilterConfig};
use crate::io::{read_dataset, write_dataset_to};
use crate::likelihood::{invert_beta, search_candidates, Candidate, MleConfig};
use crate::model::{assumption1_fn, big_sigma, phi, psi, ModelParams};
use crate::moments::{estimate_epsilon, estimate_sigma_bar2, estimate_sigma_hat, SigmaHatConfig};
use crate::oracle::{chi_cell_masses, l1_distance, particle_filter, phi_oracle, psi_oracle, ParticleConfig};
use crate::pipeline::{estimate, EstimateConfig};
use crate::simulate::{mean_exit_time_with, occupation_density, simulate_path, ExitTimeConfig, InitialPrice, MarketPath, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    /// Reduced seed and particle counts; a few minutes in total.
    Quick,
    #[default]
    Full,
}

impl Scale {
    fn pick<T>(self, quick: T, full: T) -> T {
        match self {
            Scale::Quick => quick,
            Scale::Full => full,
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

type CheckFn = fn(Scale) -> Result<(bool, String)>;

/// Identifiers and titles of the checks, in run order.
pub const CHECKS: [(&str, &str); 11] = [
    ("1", "exit-time identity"),
    ("2", "special-function oracles"),
    ("3", "stationary density"),
    ("4", "Sigma_hat consistency"),
    ("5", "quadratic-variation identity"),
    ("6", "filter vs particle filter"),
    ("7", "identifiability function"),
    ("8", "grid MLE consistency"),
    ("9", "epsilon estimate"),
    ("10", "estimation performance budget"),
    ("io", "dataset round trip"),
];

fn check_fn(id: &str) -> Option<CheckFn> {
    Some(match id {
        "1" => exit_time,
        "2" => special_functions,
        "3" => stationary_density,
        "4" => sigma_hat_consistency,
        "5" => quadratic_variation,
        "6" => filter_cross_validation,
        "7" => identifiability,
        "8" => mle_consistency,
        "9" => epsilon_sanity,
        "10" => performance_budget,
        "io" => dataset_round_trip,
        _ => return None,
    })
}

/// Runs one check by id; errors raised inside a check count as failures.
pub fn run_check(id: &str, scale: Scale) -> Result<Check> {
    let (id, name) = CHECKS
        .iter()
        .copied()
        .find(|(c, _)| *c == id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown check '{id}'")))?;
    let f = check_fn(id).expect("every listed check has a function");
    let start = Instant::now();
    let (passed, detail) = match f(scale) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Ok(Check {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    })
}

/// Runs the listed checks (all when `ids` is empty) in order, calling
/// `report` after each.
pub fn run_battery(ids: &[&str], scale: Scale, mut report: impl FnMut(&Check)) -> Result<Vec<Check>> {
    let selected: Vec<&str> = if ids.is_empty() {
        CHECKS.iter().map(|(id, _)| *id).collect()
    } else {
        ids.to_vec()
    };
    let mut out = Vec::with_capacity(selected.len());
    for id in selected {
        let c = run_check(id, scale)?;
        report(&c);
        out.push(c);
    }
    Ok(out)
}

/// Parameters (α, β, σ², σ̄²) of the exit-time battery.
pub const EXIT_TIME_BATTERY: [(f64, f64, f64, f64); 5] = [
    (1.0, 0.0, 1.0, 2.0),
    (1.0, 1.0, 1.0, 2.0),
    (1.0, 2.0, 0.5, 1.0),
    (2.0, 1.0, 1.0, 1.0),
    (0.5, 4.0, 1.0, 5.0),
];

fn exit_time(_: Scale) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &(a, b, s2, sb2)) in EXIT_TIME_BATTERY.iter().enumerate() {
        let p = ModelParams::new(a, b, s2, sb2, 0.1)?;
        let start = Instant::now();
        let est = mean_exit_time_with(&p, &ExitTimeConfig::new(4000, 0.01, 11 + i as u64))?;
        let took = start.elapsed().as_secs_f64();
        let exact = 1.0 / big_sigma(&p)?;
        let z = (est.mean - exact) / est.std_err;
        ok &= z.abs() <= 3.0 && took <= 120.0 && est.n_capped == 0;
        parts.push(format!("gamma={:.1}: {:.4} vs {:.4} (z={z:+.2})", p.gamma(), est.mean, exact));
    }
    Ok((ok, parts.join("; ")))
}

fn special_functions(_: Scale) -> Result<(bool, String)> {
    let at_zero = (phi(0.0)? - 1.0).abs().max((psi(0.0)? - 1.0).abs());
    let mut worst: f64 = 0.0;
    for z in [0.5, 1.0, 2.0, 5.0, 10.0] {
        worst = worst.max((phi(z)? - phi_oracle(z)).abs() / phi_oracle(z));
        worst = worst.max((psi(z)? - psi_oracle(z)).abs() / psi_oracle(z));
    }
    Ok((
        at_zero <= 1e-10 && worst <= 1e-8,
        format!("|phi(0)-1|,|psi(0)-1| <= {at_zero:.1e}; max rel err vs Simpson {worst:.1e} (limit 1e-8)"),
    ))
}

fn stationary_density(_: Scale) -> Result<(bool, String)> {
    const BINS: usize = 100;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, gamma) in [0.5, 2.0, 5.0].into_iter().enumerate() {
        let p = ModelParams::new(1.0, gamma, 1.0, 2.0, 0.1)?;
        let start = Instant::now();
        let hist = occupation_density(&SimConfig::new(p, 5e4, 21 + i as u64).with_dt_sim(1e-3), BINS)?;
        let took = start.elapsed().as_secs_f64();
        let expected: Vec<f64> = chi_cell_masses(gamma, BINS).into_iter().map(|m| m * BINS as f64).collect();
        let l1 = l1_distance(&hist, &expected);
        ok &= l1 <= 0.05 && took <= 60.0;
        parts.push(format!("gamma={gamma}: L1 {l1:.4}"));
    }
    Ok((ok, format!("{} (limit 0.05)", parts.join(", "))))
}

/// θ of the moment-estimator checks: α = 1, β = 1, σ² = 1, σ̄² = 2, ε = 0.1.
pub fn moment_params() -> ModelParams {
    ModelParams::new(1.0, 1.0, 1.0, 2.0, 0.1).expect("valid fixture")
}

fn sigma_hat_consistency(scale: Scale) -> Result<(bool, String)> {
    let p = moment_params();
    let seeds = scale.pick(5, 20);
    let mut sum = 0.0;
    for s in 0..seeds {
        let path = simulate_path(&SimConfig::new(p, 2e4, 400 + s))?;
        sum += estimate_sigma_hat(&path, SigmaHatConfig::default())?;
    }
    let mean = sum / seeds as f64;
    let exact = big_sigma(&p)?;
    let rel = (mean - exact).abs() / exact;
    Ok((
        rel <= 0.10,
        format!("mean over {seeds} seeds {mean:.4} vs {exact:.4}, rel err {rel:.3} (limit 0.10)"),
    ))
}

fn quadratic_variation(_: Scale) -> Result<(bool, String)> {
    let p = ModelParams::new(1.0, 0.1, 0.5, 1.0, 0.1)?;
    let path = simulate_path(&SimConfig::new(p, 1e4, 500))?;
    let qv = estimate_sigma_bar2(&path)?;
    let rel = (qv - p.sigma_bar2).abs() / p.sigma_bar2;
    let drift_bias = p.beta * p.beta * path.dt_obs / (4.0 * p.sigma_bar2);
    Ok((
        rel <= 0.03,
        format!(
            "[Y,Y]/T {qv:.4} vs {:.4}, rel err {rel:.4} (limit 0.03; drift bias at most {drift_bias:.4})",
            p.sigma_bar2
        ),
    ))
}

/// θ of the filter cross-check: α = 1, β = 0.1, σ² = 0.01, σ̄² = 0.05.
pub fn filter_params() -> ModelParams {
    ModelParams::new(1.0, 0.1, 0.01, 0.05, 0.1).expect("valid fixture")
}

fn filter_cross_validation(scale: Scale) -> Result<(bool, String)> {
    let p = filter_params();
    let path = simulate_path(&SimConfig::new(p, 500.0, 1).with_x0(InitialPrice::UniformInCell(100)))?;
    let start = Instant::now();
    let grid = run_filter(&path, &p, &FilterConfig::default())?;
    let n_particles = scale.pick(20_000, 100_000);
    let pf = particle_filter(&path, &p, &ParticleConfig::new(n_particles, 8))?;
    let took = start.elapsed().as_secs_f64();
    let rms = (grid.mu.iter().zip(&pf.mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / grid.mu.len() as f64).sqrt();
    Ok((
        rms <= 0.02 && took <= 300.0,
        format!("RMS |mu_grid - mu_particles| {rms:.4} with {n_particles} particles (limit 0.02)"),
    ))
}

fn identifiability(_: Scale) -> Result<(bool, String)> {
    let values: Vec<f64> = (0..200)
        .map(|i| assumption1_fn(0.01 + (20.0 - 0.01) * i as f64 / 199.0))
        .collect::<Result<_>>()?;
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let (a, b) = (assumption1_fn(1e-3)?, assumption1_fn(1e-4)?);
    let rel = (a - b).abs() / b.abs();
    Ok((
        (increasing || decreasing) && rel <= 0.05 && a.is_finite() && b.is_finite(),
        format!(
            "{} on [0.01, 20]; f(1e-3) = {a:.5}, f(1e-4) = {b:.5}, rel diff {rel:.1e} (limit 0.05)",
            if increasing {
                "strictly increasing"
            } else if decreasing {
                "strictly decreasing"
            } else {
                "not monotone"
            }
        ),
    ))
}

/// θ* of the estimation checks: α = 1, β = 0.05, σ² = 0.01, σ̄² = 0.0101,
/// ε = 0.1.
pub fn mle_params() -> ModelParams {
    ModelParams::new(1.0, 0.05, 0.01, 0.0101, 0.1).expect("valid fixture")
}

/// θ* followed by three decoys with the same Σ(θ).
pub fn mle_candidates() -> Result<Vec<Candidate>> {
    let truth = mle_params();
    let sigma = big_sigma(&truth)?;
    let mut out = vec![Candidate {
        alpha2: truth.alpha2(),
        sigma2: truth.sigma2,
        beta: truth.beta,
        params: truth,
    }];
    for (a2, s2) in [(1.0, 0.009), (2.0, 0.015), (1.5, 0.012)] {
        let beta = invert_beta(a2, s2, truth.sigma_bar2, sigma)?
            .ok_or_else(|| Error::InvalidConfig(format!("decoy ({a2}, {s2}) is not admissible")))?;
        out.push(Candidate {
            alpha2: a2,
            sigma2: s2,
            beta,
            params: ModelParams::from_alpha2(a2, beta, s2, truth.sigma_bar2, truth.eps)?,
        });
    }
    Ok(out)
}

/// Log-likelihoods of [`mle_candidates`] on `path`, in the same order.
fn candidate_logliks(path: &MarketPath, candidates: &[Candidate]) -> Result<Vec<f64>> {
    let r = search_candidates(path, candidates.to_vec(), 0, &MleConfig::default())?;
    Ok(candidates
        .iter()
        .map(|c| {
            r.surface
                .iter()
                .find(|s| s.alpha2 == c.alpha2 && s.sigma2 == c.sigma2)
                .map(|s| s.loglik)
                .expect("every candidate is on the surface")
        })
        .collect())
}

fn mle_consistency(scale: Scale) -> Result<(bool, String)> {
    let candidates = mle_candidates()?;
    let seeds = scale.pick(5, 20);
    let mut wins = 0;
    let mut gap_sum = 0.0;
    for s in 0..seeds {
        let cfg = SimConfig::new(candidates[0].params, 1e4, 1000 + s).with_x0(InitialPrice::UniformInCell(100));
        let ll = candidate_logliks(&simulate_path(&cfg)?, &candidates)?;
        let best_decoy = ll[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if ll[0] > best_decoy {
            wins += 1;
        }
        gap_sum += ll[0] - best_decoy;
    }
    let gap = gap_sum / seeds as f64;
    Ok((
        5 * wins >= 4 * seeds && gap > 0.0,
        format!("theta* selected in {wins}/{seeds} runs (need 80%); mean log-likelihood gap {gap:.2} (need > 0)"),
    ))
}

fn epsilon_sanity(scale: Scale) -> Result<(bool, String)> {
    let candidates = mle_candidates()?;
    let seeds = scale.pick(5, 20);
    let mut inside = 0;
    let mut values = Vec::with_capacity(seeds as usize);
    for s in 0..seeds {
        let cfg = SimConfig::new(candidates[0].params, 5e4, 2000 + s).with_x0(InitialPrice::UniformInCell(100));
        let path = simulate_path(&cfg)?;
        let ll = candidate_logliks(&path, &candidates)?;
        let best = (0..ll.len()).fold(0, |b, i| if ll[i] > ll[b] { i } else { b });
        let eps = estimate_epsilon(&path, candidates[best].params.gamma())?.eps;
        if (0.07..=0.13).contains(&eps) {
            inside += 1;
        }
        values.push(eps);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Ok((
        5 * inside >= 4 * seeds,
        format!("eps_hat in [0.07, 0.13] for {inside}/{seeds} seeds (need 80%); range [{lo:.4}, {hi:.4}]"),
    ))
}

/// Wall-clock budget of the full estimation pipeline.
pub const ESTIMATE_BUDGET: Duration = Duration::from_secs(15 * 60);

fn performance_budget(scale: Scale) -> Result<(bool, String)> {
    let horizon = scale.pick(1800.0, 16200.0);
    let cfg = SimConfig::new(mle_params(), horizon, 3000).with_x0(InitialPrice::UniformInCell(100));
    let path = simulate_path(&cfg)?;
    let builds_before = kernel_builds();
    let start = Instant::now();
    let r = estimate(&path, &EstimateConfig::default())?;
    let took = start.elapsed();
    let builds = kernel_builds() - builds_before;
    Ok((
        took <= ESTIMATE_BUDGET && builds == r.n_candidates && r.kernel_builds == r.n_candidates,
        format!(
            "{} candidates ({} excluded) over T={horizon} in {:.1} s (budget {} s); {builds} kernel builds",
            r.n_candidates,
            r.excluded,
            took.as_secs_f64(),
            ESTIMATE_BUDGET.as_secs()
        ),
    ))
}

fn dataset_round_trip(_: Scale) -> Result<(bool, String)> {
    let path = simulate_path(&SimConfig::new(moment_params(), 2000.0, 600))?;
    let extra = BTreeMap::from([("origin".to_string(), "verify".to_string())]);
    let mut first = Vec::new();
    write_dataset_to(&mut first, &path, &extra)?;
    let back = read_dataset(first.as_slice(), "round trip")?;
    let mut second = Vec::new();
    write_dataset_to(&mut second, &back, &extra)?;
    let same_values = back.bid == path.bid
        && back.ask == path.ask
        && back.order_flow == path.order_flow
        && back.times == path.times
        && back.meta == path.meta;
    Ok((
        same_values && first == second,
        format!(
            "{} rows; values {}, bytes {}",
            path.len(),
            if same_values { "identical" } else { "differ" },
            if first == second { "identical" } else { "differ" }
        ),
    ))
}
