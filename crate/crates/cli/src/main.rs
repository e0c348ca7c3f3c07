//! `latent-price`: simulate, filter and estimate the latent-price model.

mod overlay;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use latent_price::io::{
    dataset_metadata, load_dataset, load_result, load_ticks, resample, save_result, write_dataset_with,
    write_filter_trace, write_surface, SessionConfig,
};
use latent_price::likelihood::{Axis, LikelihoodRoute, SurfacePoint};
use latent_price::verify::{self, Scale};
use latent_price::{
    estimate, run_filter, simulate_path, EstimateConfig, ErrorKind, FilterConfig, FilterGrid, MarketPath, ModelParams,
    SigmaHatConfig, SimConfig,
};

use overlay::{usage, Overlay, StartPrice, Theta, UsageError};

#[derive(Parser)]
#[command(name = "latent-price", version, about = "Latent-price model: simulation, filtering and grid MLE")]
struct Cli {
    /// key=value file supplying defaults for any flag (flags take precedence).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a quote/order-flow path and write it as a dataset.
    Simulate(SimulateArgs),
    /// Estimate (alpha^2, beta, sigma^2, eps) from a dataset or raw ticks.
    Estimate(EstimateArgs),
    /// Dump the filtered micro-drift series for a dataset under given parameters.
    Filter(FilterArgs),
    /// Run the self-check battery and report measured errors.
    Verify(VerifyArgs),
    /// Emit cross-sections of a saved likelihood surface.
    Surface(SurfaceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// alpha,beta,sigma2
    #[arg(long, value_name = "A,B,S2")]
    theta: Option<Theta>,
    #[arg(long = "sigma-bar2")]
    sigma_bar2: Option<f64>,
    /// Half-width of the one-tick spread region.
    #[arg(long)]
    eps: Option<f64>,
    /// Horizon in seconds.
    #[arg(long = "T", value_name = "SECONDS")]
    horizon: Option<f64>,
    #[arg(long = "dt-sim")]
    dt_sim: Option<f64>,
    /// Observation spacing in seconds.
    #[arg(long = "dt-obs")]
    dt_obs: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial latent price, or cell:N for a uniform start in [N, N+1).
    #[arg(long, value_name = "PRICE|cell:N")]
    x0: Option<StartPrice>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset written by `simulate`, or a raw tick file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Result file; the surface table goes next to it unless --surface-out.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "surface-out")]
    surface_out: Option<PathBuf>,
    /// Known sigma_bar^2; estimated from quadratic variation when absent.
    #[arg(long = "sigma-bar2")]
    sigma_bar2: Option<f64>,
    #[arg(long = "grid-alpha2", value_name = "MIN:MAX:N")]
    grid_alpha2: Option<Axis>,
    #[arg(long = "grid-sigma2", value_name = "MIN:MAX:N")]
    grid_sigma2: Option<Axis>,
    /// Blocks for Sigma_hat; floor(sqrt(T)) when absent.
    #[arg(long = "m-blocks")]
    m_blocks: Option<usize>,
    /// Filter grid cells.
    #[arg(long)]
    cells: Option<usize>,
    /// normalized | zakai
    #[arg(long)]
    route: Option<Route>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// alpha,beta,sigma2; taken from the dataset header when absent.
    #[arg(long, value_name = "A,B,S2")]
    theta: Option<Theta>,
    #[arg(long = "sigma-bar2")]
    sigma_bar2: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    /// Also dump the density every N steps.
    #[arg(long = "snapshot-every", value_name = "N")]
    snapshot_every: Option<usize>,
    /// Trace file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Fewer seeds and particles; same thresholds.
    #[arg(long)]
    quick: bool,
    /// Run only these checks (1-10, io); repeatable.
    #[arg(long = "check", value_name = "ID")]
    checks: Vec<String>,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Result file written by `estimate`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Slice at the grid alpha^2 nearest this value (default: the estimate).
    #[arg(long)]
    alpha2: Option<f64>,
    /// Slice at the grid sigma^2 nearest this value (default: the estimate).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Table file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Route(LikelihoodRoute);

impl FromStr for Route {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "normalized" => Ok(Route(LikelihoodRoute::Normalized)),
            "zakai" => Ok(Route(LikelihoodRoute::Zakai)),
            _ => Err(format!("route must be normalized or zakai, got {s:?}")),
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            LikelihoodRoute::Normalized => "normalized",
            LikelihoodRoute::Zakai => "zakai",
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (category, status) = classify(&e);
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(status)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("usage", 2);
        }
        if let Some(err) = cause.downcast_ref::<latent_price::Error>() {
            return match err.kind() {
                ErrorKind::Usage => ("usage", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numerical => ("numerical", 4),
            };
        }
    }
    ("data", 3)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut ov = Overlay::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &mut ov),
        Command::Estimate(a) => estimate_cmd(a, &mut ov),
        Command::Filter(a) => filter(a, &mut ov),
        Command::Verify(a) => verify_cmd(a),
        Command::Surface(a) => surface(a, &mut ov),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// File writer, or stdout when no path is given.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(a: SimulateArgs, ov: &mut Overlay) -> Result<ExitCode> {
    ov.note("command", "simulate");
    let theta: Theta = ov.require("theta", a.theta)?;
    let sigma_bar2: f64 = ov.require("sigma-bar2", a.sigma_bar2)?;
    let eps = ov.or("eps", a.eps, 0.1)?;
    let horizon = ov.or("T", a.horizon, 16200.0)?;
    let dt_sim = ov.or("dt-sim", a.dt_sim, 0.01)?;
    let dt_obs = ov.or("dt-obs", a.dt_obs, 1.0)?;
    let seed = ov.or("seed", a.seed, 0u64)?;
    let x0: StartPrice = ov.or("x0", a.x0, StartPrice(Default::default()))?;
    let out: PathBuf = ov.require("out", a.out.map(|p| p.display().to_string()))?.into();

    let params = ModelParams::new(theta.alpha, theta.beta, theta.sigma2, sigma_bar2, eps)?;
    let mut cfg = SimConfig::new(params, horizon, seed).with_dt_sim(dt_sim).with_x0(x0.0);
    cfg.dt_obs = dt_obs;
    let path = simulate_path(&cfg)?;
    write_dataset_with(&path, &out, &ov.effective)?;
    eprintln!("wrote {} observations to {}", path.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

/// Loads a simulator dataset, or resamples a raw tick file onto the
/// session grid when the header carries no observation spacing.
fn load_observations(input: &Path, ov: &mut Overlay) -> Result<MarketPath> {
    let meta = dataset_metadata(input)?;
    if meta.contains_key("dt_obs") {
        ov.note("input_format", "dataset");
        return Ok(load_dataset(input)?);
    }
    ov.note("input_format", "ticks");
    let session = SessionConfig::from_map(ov.raw())?;
    ov.note("session_open", &session.session_open);
    ov.note("window_start", &session.window_start);
    ov.note("window_end", &session.window_end);
    ov.note("step", session.step);
    let ticks = load_ticks(input)?;
    let r = resample(&ticks, &session.resample_options()?)?;
    for g in &r.gaps {
        eprintln!("warning: no ticks between t={} and t={}", g.from, g.to);
    }
    ov.note("gaps", r.gaps.len());
    Ok(r.path)
}

fn estimate_cmd(a: EstimateArgs, ov: &mut Overlay) -> Result<ExitCode> {
    ov.note("command", "estimate");
    let input: PathBuf = ov.require("input", a.input.map(|p| p.display().to_string()))?.into();
    let out: PathBuf = ov.require("out", a.out.map(|p| p.display().to_string()))?.into();
    let surface_out: PathBuf = ov
        .or(
            "surface-out",
            a.surface_out.map(|p| p.display().to_string()),
            out.with_extension("surface.csv").display().to_string(),
        )?
        .into();
    let sigma_bar2 = ov.get("sigma-bar2", a.sigma_bar2)?;
    let alpha2_axis = ov.get("grid-alpha2", a.grid_alpha2)?;
    let sigma2_axis = ov.get("grid-sigma2", a.grid_sigma2)?;
    let m_blocks = ov.get("m-blocks", a.m_blocks)?;
    let cells = ov.or("cells", a.cells, 100usize)?;
    let route = ov.or("route", a.route, Route(LikelihoodRoute::Normalized))?;

    let path = load_observations(&input, ov)?;
    let mut cfg = EstimateConfig {
        sigma_bar2,
        sigma_hat: match m_blocks {
            Some(0) => return Err(usage("--m-blocks must be at least 1")),
            Some(m) => SigmaHatConfig::Fixed(m),
            None => SigmaHatConfig::SqrtHorizon,
        },
        alpha2_axis,
        sigma2_axis,
        ..Default::default()
    };
    cfg.mle.filter = FilterConfig {
        grid: FilterGrid::new(cells)?,
        dt: path.dt_obs,
        ..FilterConfig::default()
    };
    cfg.mle.route = route.0;
    cfg.provenance = ov.effective.clone();
    let result = estimate(&path, &cfg)?;
    save_result(&result, &out)?;
    write_surface(&result.surface, &surface_out, &result.config)?;

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "alpha2_hat={}", result.alpha2_hat)?;
    writeln!(stdout, "beta_hat={}", result.beta_hat)?;
    writeln!(stdout, "sigma2_hat={}", result.sigma2_hat)?;
    writeln!(stdout, "eps_hat={}", result.eps_hat)?;
    writeln!(stdout, "sigma_bar2_hat={}", result.sigma_bar2_hat)?;
    writeln!(stdout, "sigma_hat={}", result.sigma_hat)?;
    writeln!(stdout, "max_loglik={}", result.max_loglik)?;
    writeln!(
        stdout,
        "candidates={} excluded={} ties={} runtime_secs={:.2}",
        result.n_candidates,
        result.excluded,
        result.ties.len(),
        result.runtime_secs
    )?;
    Ok(ExitCode::SUCCESS)
}

fn filter(a: FilterArgs, ov: &mut Overlay) -> Result<ExitCode> {
    ov.note("command", "filter");
    let input: PathBuf = ov.require("input", a.input.map(|p| p.display().to_string()))?.into();
    let theta = ov.get("theta", a.theta)?;
    let sigma_bar2 = ov.get("sigma-bar2", a.sigma_bar2)?;
    let cells = ov.or("cells", a.cells, 100usize)?;
    let snapshot_every = ov.get("snapshot-every", a.snapshot_every)?;
    let out = ov.get("out", a.out.map(|p| p.display().to_string()))?;

    let path = load_observations(&input, ov)?;
    let from_data = path.meta.as_ref().map(|m| m.params);
    let params = match (theta, from_data) {
        (Some(t), _) => {
            let sb2 = sigma_bar2
                .or(from_data.map(|p| p.sigma_bar2))
                .ok_or_else(|| usage("--sigma-bar2 is required when the dataset header has none"))?;
            ModelParams::new(t.alpha, t.beta, t.sigma2, sb2, from_data.map_or(0.1, |p| p.eps))?
        }
        (None, Some(mut p)) => {
            if let Some(sb2) = sigma_bar2 {
                p.sigma_bar2 = sb2;
                p.validate()?;
            }
            p
        }
        (None, None) => return Err(usage("--theta is required when the dataset header has none")),
    };
    ov.note("theta", Theta { alpha: params.alpha, beta: params.beta, sigma2: params.sigma2 });
    ov.note("sigma-bar2", params.sigma_bar2);
    let cfg = FilterConfig {
        grid: FilterGrid::new(cells)?,
        dt: path.dt_obs,
        snapshot_every,
        ..FilterConfig::default()
    };
    let output = run_filter(&path, &params, &cfg)?;
    let mut w = sink(out.as_deref().map(Path::new))?;
    write_filter_trace(&mut w, &output, &ov.effective)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(a: VerifyArgs) -> Result<ExitCode> {
    let scale = if a.quick { Scale::Quick } else { Scale::Full };
    let ids: Vec<&str> = a.checks.iter().map(String::as_str).collect();
    for id in &ids {
        if !verify::CHECKS.iter().any(|(c, _)| c == id) {
            return Err(usage(format!("unknown check '{id}'")));
        }
    }
    let checks = verify::run_battery(&ids, scale, |c| println!("{c}"))?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        eprintln!("error[numerical]: {failed} of {} checks failed", checks.len());
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

/// Grid value closest to `target`.
fn nearest(values: impl Iterator<Item = f64>, target: f64) -> Option<f64> {
    values.fold(None, |best: Option<f64>, v| match best {
        Some(b) if (b - target).abs() <= (v - target).abs() => Some(b),
        _ => Some(v),
    })
}

fn surface(a: SurfaceArgs, ov: &mut Overlay) -> Result<ExitCode> {
    let input: PathBuf = ov.require("input", a.input.map(|p| p.display().to_string()))?.into();
    let out = ov.get("out", a.out.map(|p| p.display().to_string()))?;
    let result = load_result(&input)?;
    if result.surface.is_empty() {
        return Err(latent_price::Error::InvalidInput(format!("{} has an empty surface", input.display())).into());
    }
    let alpha2 = nearest(result.surface.iter().map(|p| p.alpha2), a.alpha2.unwrap_or(result.alpha2_hat))
        .expect("surface is non-empty");
    let sigma2 = nearest(result.surface.iter().map(|p| p.sigma2), a.sigma2.unwrap_or(result.sigma2_hat))
        .expect("surface is non-empty");

    let mut fixed_a: Vec<&SurfacePoint> = result.surface.iter().filter(|p| p.alpha2 == alpha2).collect();
    fixed_a.sort_by(|x, y| x.sigma2.total_cmp(&y.sigma2));
    let mut fixed_s: Vec<&SurfacePoint> = result.surface.iter().filter(|p| p.sigma2 == sigma2).collect();
    fixed_s.sort_by(|x, y| x.alpha2.total_cmp(&y.alpha2));

    let mut embedded: BTreeMap<String, String> = result.config.clone();
    embedded.insert("surface.source".into(), input.display().to_string());
    embedded.insert("surface.alpha2".into(), alpha2.to_string());
    embedded.insert("surface.sigma2".into(), sigma2.to_string());
    let mut w = sink(out.as_deref().map(Path::new))?;
    for (k, v) in &embedded {
        writeln!(w, "# config.{k}={v}")?;
    }
    writeln!(w, "slice,alpha2,sigma2,beta,loglik")?;
    for p in fixed_a {
        writeln!(w, "fixed_alpha2,{},{},{},{}", p.alpha2, p.sigma2, p.beta, p.loglik)?;
    }
    for p in fixed_s {
        writeln!(w, "fixed_sigma2,{},{},{},{}", p.alpha2, p.sigma2, p.beta, p.loglik)?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}
