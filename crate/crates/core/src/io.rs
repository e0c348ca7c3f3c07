//! File formats: tick/dataset files, resampling onto the observation grid,
//! key=value configuration, estimation results and plot tables.
//!
//! Tick file: delimited text with the exact header `timestamp,bid,ask,order_flow`
//! (an optional fifth `latent` column is written for simulated data). Lines
//! starting with `#` carry `key=value` metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::SurfacePoint;
use crate::model::ModelParams;
use crate::moments::EpsClamp;
use crate::simulate::{InitialPrice, MarketPath, SimMeta};

pub const TICK_HEADER: &str = "timestamp,bid,ask,order_flow";
const LATENT_COLUMN: &str = "latent";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    /// Seconds since session open.
    pub timestamp: f64,
    pub bid: i64,
    pub ask: i64,
    /// Cumulative signed limit-order volume.
    pub order_flow: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::io(format!("opening {}", path.display()), e)
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, name: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: name.to_string(),
            line: i as u64 + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_key_values(&text, &path.display().to_string())
}

struct TickTable {
    records: Vec<TickRecord>,
    latent: Option<Vec<f64>>,
    meta: BTreeMap<String, String>,
}

fn read_tick_table<R: Read>(reader: R, name: &str) -> Result<TickTable> {
    let mut text = String::new();
    BufReader::new(reader)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(format!("reading {name}"), e))?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: name.to_string(),
        line,
        message,
    };

    let mut meta = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    let mut header = None;
    for (i, line) in lines.by_ref() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        header = Some((i as u64 + 1, line.trim_end_matches('\r')));
        break;
    }
    let Some((header_line, header)) = header else {
        return Ok(TickTable {
            records: Vec::new(),
            latent: None,
            meta,
        });
    };
    let with_latent = if header == TICK_HEADER {
        false
    } else if header == format!("{TICK_HEADER},{LATENT_COLUMN}") {
        true
    } else {
        return Err(parse_err(
            header_line,
            format!("header must be {TICK_HEADER:?} (optionally followed by \",latent\"), got {header:?}"),
        ));
    };
    let ncols = if with_latent { 5 } else { 4 };

    let mut records = Vec::new();
    let mut latent = with_latent.then(Vec::new);
    let mut last_ts = f64::NEG_INFINITY;
    for (i, line) in lines {
        let line_no = i as u64 + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ncols {
            return Err(parse_err(line_no, format!("expected {ncols} fields, got {}", fields.len())));
        }
        let num = |idx: usize, what: &str| -> Result<f64> {
            let v: f64 = fields[idx]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad {what} {:?}", fields[idx])))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let int = |idx: usize, what: &str| -> Result<i64> {
            fields[idx]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad {what} {:?} (integer ticks expected)", fields[idx])))
        };
        let rec = TickRecord {
            timestamp: num(0, "timestamp")?,
            bid: int(1, "bid")?,
            ask: int(2, "ask")?,
            order_flow: num(3, "order_flow")?,
        };
        if rec.bid >= rec.ask {
            return Err(parse_err(
                line_no,
                format!("crossed or locked quote: bid {} >= ask {}", rec.bid, rec.ask),
            ));
        }
        if rec.timestamp < last_ts {
            return Err(parse_err(
                line_no,
                format!("timestamp {} precedes previous {}", rec.timestamp, last_ts),
            ));
        }
        last_ts = rec.timestamp;
        if let Some(l) = latent.as_mut() {
            l.push(num(4, "latent")?);
        }
        records.push(rec);
    }
    Ok(TickTable { records, latent, meta })
}

/// Reads and validates a tick file.
pub fn load_ticks(path: &Path) -> Result<Vec<TickRecord>> {
    Ok(read_tick_table(open(path)?, &path.display().to_string())?.records)
}

pub fn read_ticks<R: Read>(reader: R, name: &str) -> Result<Vec<TickRecord>> {
    Ok(read_tick_table(reader, name)?.records)
}

pub fn write_ticks<W: Write>(out: &mut W, ticks: &[TickRecord]) -> Result<()> {
    let wrap = |e| Error::io("writing ticks", e);
    writeln!(out, "{TICK_HEADER}").map_err(wrap)?;
    for t in ticks {
        writeln!(out, "{},{},{},{}", t.timestamp, t.bid, t.ask, t.order_flow).map_err(wrap)?;
    }
    Ok(())
}

/// Tick view of a gridded path.
pub fn path_to_ticks(path: &MarketPath) -> Vec<TickRecord> {
    (0..path.len())
        .map(|i| TickRecord {
            timestamp: path.times[i],
            bid: path.bid[i],
            ask: path.ask[i],
            order_flow: path.order_flow[i],
        })
        .collect()
}

fn meta_lines(path: &MarketPath, extra: &BTreeMap<String, String>) -> Vec<(String, String)> {
    let mut kv = vec![("dt_obs".to_string(), path.dt_obs.to_string())];
    if let Some(m) = &path.meta {
        let p = &m.params;
        kv.extend([
            ("seed".into(), m.seed.to_string()),
            ("alpha".into(), p.alpha.to_string()),
            ("beta".into(), p.beta.to_string()),
            ("sigma2".into(), p.sigma2.to_string()),
            ("sigma_bar2".into(), p.sigma_bar2.to_string()),
            ("eps".into(), p.eps.to_string()),
            ("dt_sim".into(), m.dt_sim.to_string()),
        ]);
        let x0 = match m.x0 {
            InitialPrice::Fixed(x) => x.to_string(),
            InitialPrice::UniformInCell(c) => format!("cell:{c}"),
        };
        kv.push(("x0".into(), x0));
    }
    for (k, v) in extra {
        kv.push((format!("config.{k}"), v.clone()));
    }
    kv
}

/// Writes a path in the tick format, with metadata comments and the latent
/// column when present. `extra` lands in the header as `config.*` entries.
pub fn write_dataset_to<W: Write>(out: &mut W, path: &MarketPath, extra: &BTreeMap<String, String>) -> Result<()> {
    let wrap = |e| Error::io("writing dataset", e);
    for (k, v) in meta_lines(path, extra) {
        writeln!(out, "# {k}={v}").map_err(wrap)?;
    }
    match &path.latent {
        Some(latent) => {
            writeln!(out, "{TICK_HEADER},{LATENT_COLUMN}").map_err(wrap)?;
            for i in 0..path.len() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    path.times[i], path.bid[i], path.ask[i], path.order_flow[i], latent[i]
                )
                .map_err(wrap)?;
            }
        }
        None => {
            writeln!(out, "{TICK_HEADER}").map_err(wrap)?;
            for i in 0..path.len() {
                writeln!(out, "{},{},{},{}", path.times[i], path.bid[i], path.ask[i], path.order_flow[i])
                    .map_err(wrap)?;
            }
        }
    }
    Ok(())
}

pub fn write_dataset(path: &MarketPath, destination: &Path) -> Result<()> {
    write_dataset_with(path, destination, &BTreeMap::new())
}

pub fn write_dataset_with(path: &MarketPath, destination: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut w = create(destination)?;
    write_dataset_to(&mut w, path, extra)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", destination.display()), e))
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str, name: &str) -> Result<Option<f64>> {
    meta.get(key)
        .map(|v| {
            v.parse().map_err(|_| Error::Parse {
                path: name.to_string(),
                line: 0,
                message: format!("bad metadata {key}={v}"),
            })
        })
        .transpose()
}

fn sim_meta(meta: &BTreeMap<String, String>, name: &str) -> Result<Option<SimMeta>> {
    let Some(seed) = meta.get("seed") else {
        return Ok(None);
    };
    let bad = |m: String| Error::Parse {
        path: name.to_string(),
        line: 0,
        message: m,
    };
    let seed = seed.parse().map_err(|_| bad(format!("bad seed {seed}")))?;
    let get = |k: &str| meta_f64(meta, k, name)?.ok_or_else(|| bad(format!("missing metadata {k}")));
    let params = ModelParams::new(get("alpha")?, get("beta")?, get("sigma2")?, get("sigma_bar2")?, get("eps")?)?;
    let x0 = match meta.get("x0").map(String::as_str) {
        Some(v) if v.starts_with("cell:") => {
            InitialPrice::UniformInCell(v[5..].parse().map_err(|_| bad(format!("bad x0 {v}")))?)
        }
        Some(v) => InitialPrice::Fixed(v.parse().map_err(|_| bad(format!("bad x0 {v}")))?),
        None => InitialPrice::default(),
    };
    Ok(Some(SimMeta {
        seed,
        params,
        dt_sim: get("dt_sim")?,
        x0,
    }))
}

/// Reads a gridded dataset (as written by [`write_dataset`]) back into a path.
/// Without a `dt_obs` metadata line the spacing is inferred and must be regular.
pub fn load_dataset(path: &Path) -> Result<MarketPath> {
    read_dataset(open(path)?, &path.display().to_string())
}

pub fn read_dataset<R: Read>(reader: R, name: &str) -> Result<MarketPath> {
    let table = read_tick_table(reader, name)?;
    let n = table.records.len();
    let dt_obs = match meta_f64(&table.meta, "dt_obs", name)? {
        Some(dt) => dt,
        None if n >= 2 => table.records[1].timestamp - table.records[0].timestamp,
        None => 1.0,
    };
    if !(dt_obs > 0.0) {
        return Err(Error::InvalidInput(format!("{name}: observation spacing {dt_obs} must be positive")));
    }
    let t0 = table.records.first().map_or(0.0, |r| r.timestamp);
    for (i, r) in table.records.iter().enumerate() {
        let expect = t0 + i as f64 * dt_obs;
        if (r.timestamp - expect).abs() > 1e-6 * dt_obs {
            return Err(Error::InvalidInput(format!(
                "{name}: row {} at t = {} is off the {dt_obs} s grid; resample the ticks first",
                i + 1,
                r.timestamp
            )));
        }
    }
    let path = MarketPath {
        dt_obs,
        times: table.records.iter().map(|r| r.timestamp).collect(),
        order_flow: table.records.iter().map(|r| r.order_flow).collect(),
        bid: table.records.iter().map(|r| r.bid).collect(),
        ask: table.records.iter().map(|r| r.ask).collect(),
        latent: table.latent,
        meta: sim_meta(&table.meta, name)?,
    };
    Ok(path)
}

/// Full metadata block of a dataset file (without the leading `#`).
pub fn dataset_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let reader = BufReader::new(open(path)?);
    let mut meta = BTreeMap::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        match line.strip_prefix('#') {
            Some(rest) => {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            None if line.trim().is_empty() => continue,
            None => break,
        }
    }
    Ok(meta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleOptions {
    pub step: f64,
    /// [start, end] in tick timestamps; defaults to the tick span.
    pub window: Option<(f64, f64)>,
    /// Inter-tick silences longer than this are reported.
    pub max_gap: Option<f64>,
}

impl ResampleOptions {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            window: None,
            max_gap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub path: MarketPath,
    pub gaps: Vec<Gap>,
}

/// Last-observation-carried-forward sampling at `start + k·step`, with the
/// order flow rebased to start at 0.
pub fn resample(ticks: &[TickRecord], opts: &ResampleOptions) -> Result<Resampled> {
    if !(opts.step > 0.0) {
        return Err(Error::InvalidConfig(format!("resample step must be positive, got {}", opts.step)));
    }
    let (first, last) = match (ticks.first(), ticks.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::InvalidInput("no ticks to resample".into())),
    };
    let (start, end) = opts.window.unwrap_or((first.timestamp, last.timestamp));
    if !(end > start) {
        return Err(Error::InvalidConfig(format!("empty resampling window [{start}, {end}]")));
    }
    if first.timestamp > start {
        return Err(Error::InvalidInput(format!(
            "first tick at {} is after the window start {start}; nothing to carry forward",
            first.timestamp
        )));
    }
    let n_steps = ((end - start) / opts.step + 1e-9).floor() as usize;
    if n_steps < 1 {
        return Err(Error::InvalidInput(format!(
            "window [{start}, {end}] shorter than one step of {} s",
            opts.step
        )));
    }

    let mut path = MarketPath::empty(opts.step);
    let mut i = 0;
    for k in 0..=n_steps {
        let t = start + k as f64 * opts.step;
        while i + 1 < ticks.len() && ticks[i + 1].timestamp <= t {
            i += 1;
        }
        let r = &ticks[i];
        path.times.push(t);
        path.bid.push(r.bid);
        path.ask.push(r.ask);
        path.order_flow.push(r.order_flow);
    }
    let y0 = path.order_flow[0];
    for y in &mut path.order_flow {
        *y -= y0;
    }

    let mut gaps = Vec::new();
    if let Some(max_gap) = opts.max_gap {
        let t_end = start + n_steps as f64 * opts.step;
        let mut prev = start;
        for r in ticks.iter().filter(|r| r.timestamp > start && r.timestamp <= t_end) {
            if r.timestamp - prev > max_gap {
                gaps.push(Gap {
                    from: prev,
                    to: r.timestamp,
                });
            }
            prev = r.timestamp;
        }
        if t_end - prev > max_gap {
            gaps.push(Gap { from: prev, to: t_end });
        }
    }
    Ok(Resampled { path, gaps })
}

/// Parses `HH:MM` or `HH:MM:SS` into seconds after midnight.
pub fn parse_clock(s: &str) -> Result<f64> {
    let bad = || Error::InvalidConfig(format!("clock time must be HH:MM[:SS], got {s:?}"));
    let parts: Vec<&str> = s.trim().split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let h: u32 = parts[0].parse().map_err(|_| bad())?;
    let m: u32 = parts[1].parse().map_err(|_| bad())?;
    let sec: f64 = match parts.get(2) {
        Some(p) => p.parse().map_err(|_| bad())?,
        None => 0.0,
    };
    if h > 23 || m > 59 || !(0.0..60.0).contains(&sec) {
        return Err(bad());
    }
    Ok(f64::from(h * 3600 + m * 60) + sec)
}

/// Session and I/O settings, read from a plain `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Clock time corresponding to tick timestamp 0.
    pub session_open: String,
    pub window_start: String,
    pub window_end: String,
    pub step: f64,
    pub max_gap: Option<f64>,
    pub input: Option<String>,
    pub output: Option<String>,
    pub grid_alpha2: Option<String>,
    pub grid_sigma2: Option<String>,
    pub seed: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_open: "09:30".into(),
            window_start: "10:30".into(),
            window_end: "15:00".into(),
            step: 1.0,
            max_gap: None,
            input: None,
            output: None,
            grid_alpha2: None,
            grid_sigma2: None,
            seed: None,
        }
    }
}

impl SessionConfig {
    /// Overlays recognized keys from a key=value map; unknown keys are ignored
    /// so one file can also carry command-line defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("{k}: expected a number, got {v:?}")))
        };
        for (k, v) in map {
            match k.as_str() {
                "session_open" => cfg.session_open = v.clone(),
                "window_start" => cfg.window_start = v.clone(),
                "window_end" => cfg.window_end = v.clone(),
                "step" => cfg.step = num(k, v)?,
                "max_gap" => cfg.max_gap = Some(num(k, v)?),
                "input" => cfg.input = Some(v.clone()),
                "output" | "out" => cfg.output = Some(v.clone()),
                "grid_alpha2" | "grid-alpha2" => cfg.grid_alpha2 = Some(v.clone()),
                "grid_sigma2" | "grid-sigma2" => cfg.grid_sigma2 = Some(v.clone()),
                "seed" => {
                    cfg.seed = Some(
                        v.parse()
                            .map_err(|_| Error::InvalidConfig(format!("seed: expected an integer, got {v:?}")))?,
                    )
                }
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.window()?;
        if !(b > a) {
            return Err(Error::InvalidConfig(format!(
                "empty session window {}..{}",
                self.window_start, self.window_end
            )));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Window in tick-timestamp seconds (relative to session open).
    pub fn window(&self) -> Result<(f64, f64)> {
        let open = parse_clock(&self.session_open)?;
        Ok((
            parse_clock(&self.window_start)? - open,
            parse_clock(&self.window_end)? - open,
        ))
    }

    pub fn resample_options(&self) -> Result<ResampleOptions> {
        Ok(ResampleOptions {
            step: self.step,
            window: Some(self.window()?),
            max_gap: self.max_gap,
        })
    }
}

pub const RESULT_MAGIC: &str = "latent-price-result";
pub const RESULT_VERSION: &str = "1";
const SURFACE_MARKER: &str = "[surface]";
pub const SURFACE_HEADER: &str = "alpha2,sigma2,beta,loglik";

/// Output of the full estimation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub n_obs: usize,
    pub horizon: f64,
    pub sigma_bar2_hat: f64,
    pub sigma_hat: f64,
    pub m_blocks: usize,
    pub alpha2_hat: f64,
    pub beta_hat: f64,
    pub sigma2_hat: f64,
    pub max_loglik: f64,
    /// (α², σ²) of all co-maximizers.
    pub ties: Vec<(f64, f64)>,
    pub eps_hat: f64,
    pub eps_clamped: Option<EpsClamp>,
    pub wide_fraction: f64,
    pub n_candidates: usize,
    pub excluded: usize,
    pub kernel_builds: usize,
    pub runtime_secs: f64,
    /// Effective configuration (flags and config overlay).
    pub config: BTreeMap<String, String>,
    pub surface: Vec<SurfacePoint>,
}

impl EstimationResult {
    pub fn gamma_hat(&self) -> f64 {
        self.alpha2_hat.sqrt() * self.beta_hat / self.sigma2_hat
    }
}

fn clamp_str(c: Option<EpsClamp>) -> &'static str {
    match c {
        None => "none",
        Some(EpsClamp::Lower) => "lower",
        Some(EpsClamp::Upper) => "upper",
    }
}

pub fn write_result_to<W: Write>(out: &mut W, r: &EstimationResult) -> Result<()> {
    let wrap = |e| Error::io("writing result", e);
    let ties = r
        .ties
        .iter()
        .map(|(a, s)| format!("{a}:{s}"))
        .collect::<Vec<_>>()
        .join(";");
    writeln!(out, "{RESULT_MAGIC} {RESULT_VERSION}").map_err(wrap)?;
    let scalars: Vec<(&str, String)> = vec![
        ("n_obs", r.n_obs.to_string()),
        ("horizon", r.horizon.to_string()),
        ("sigma_bar2_hat", r.sigma_bar2_hat.to_string()),
        ("sigma_hat", r.sigma_hat.to_string()),
        ("m_blocks", r.m_blocks.to_string()),
        ("alpha2_hat", r.alpha2_hat.to_string()),
        ("beta_hat", r.beta_hat.to_string()),
        ("sigma2_hat", r.sigma2_hat.to_string()),
        ("max_loglik", r.max_loglik.to_string()),
        ("ties", ties),
        ("eps_hat", r.eps_hat.to_string()),
        ("eps_clamped", clamp_str(r.eps_clamped).to_string()),
        ("wide_fraction", r.wide_fraction.to_string()),
        ("n_candidates", r.n_candidates.to_string()),
        ("excluded", r.excluded.to_string()),
        ("kernel_builds", r.kernel_builds.to_string()),
        ("runtime_secs", r.runtime_secs.to_string()),
    ];
    for (k, v) in scalars {
        writeln!(out, "{k}={v}").map_err(wrap)?;
    }
    for (k, v) in &r.config {
        writeln!(out, "config.{k}={v}").map_err(wrap)?;
    }
    writeln!(out, "{SURFACE_MARKER}").map_err(wrap)?;
    write_surface_to(out, &r.surface)
}

pub fn write_surface_to<W: Write>(out: &mut W, surface: &[SurfacePoint]) -> Result<()> {
    let wrap = |e| Error::io("writing surface", e);
    writeln!(out, "{SURFACE_HEADER}").map_err(wrap)?;
    for p in surface {
        writeln!(out, "{},{},{},{}", p.alpha2, p.sigma2, p.beta, p.loglik).map_err(wrap)?;
    }
    Ok(())
}

pub fn save_result(r: &EstimationResult, destination: &Path) -> Result<()> {
    let mut w = create(destination)?;
    write_result_to(&mut w, r)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", destination.display()), e))
}

/// Writes the surface table preceded by `# config.*` comment lines.
pub fn write_surface(surface: &[SurfacePoint], destination: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut w = create(destination)?;
    for (k, v) in extra {
        writeln!(w, "# config.{k}={v}").map_err(|e| Error::io("writing surface", e))?;
    }
    write_surface_to(&mut w, surface)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", destination.display()), e))
}

pub fn load_result(path: &Path) -> Result<EstimationResult> {
    read_result(open(path)?, &path.display().to_string())
}

pub fn read_result<R: Read>(reader: R, name: &str) -> Result<EstimationResult> {
    let mut text = String::new();
    BufReader::new(reader)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(format!("reading {name}"), e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: name.to_string(),
        line: line as u64,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| perr(1, "empty result file".into()))?;
    let version = first
        .strip_prefix(RESULT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| perr(1, format!("not a result file (expected {RESULT_MAGIC:?} first line)")))?;
    if version != RESULT_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: RESULT_VERSION.to_string(),
        });
    }

    let mut fields = BTreeMap::new();
    let mut config = BTreeMap::new();
    let mut surface = Vec::new();
    let mut in_surface = false;
    let mut saw_header = false;
    for (i, line) in lines {
        let no = i + 1;
        if line.is_empty() {
            continue;
        }
        if in_surface {
            if !saw_header {
                if line != SURFACE_HEADER {
                    return Err(perr(no, format!("surface header must be {SURFACE_HEADER:?}")));
                }
                saw_header = true;
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(no, format!("bad surface row {line:?}")))?;
            if v.len() != 4 {
                return Err(perr(no, format!("surface row needs 4 fields, got {}", v.len())));
            }
            surface.push(SurfacePoint {
                alpha2: v[0],
                sigma2: v[1],
                beta: v[2],
                loglik: v[3],
            });
        } else if line == SURFACE_MARKER {
            in_surface = true;
        } else {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(no, format!("expected key=value, got {line:?}")))?;
            match k.strip_prefix("config.") {
                Some(ck) => config.insert(ck.to_string(), v.to_string()),
                None => fields.insert(k.to_string(), v.to_string()),
            };
        }
    }

    let get = |k: &str| fields.get(k).ok_or_else(|| perr(0, format!("missing field {k}")));
    let f = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| perr(0, format!("bad number for {k}"))) };
    let u = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| perr(0, format!("bad count for {k}"))) };
    let ties = get("ties")?
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, s) = pair.split_once(':').ok_or_else(|| perr(0, format!("bad tie {pair:?}")))?;
            Ok((
                a.parse().map_err(|_| perr(0, format!("bad tie {pair:?}")))?,
                s.parse().map_err(|_| perr(0, format!("bad tie {pair:?}")))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let eps_clamped = match get("eps_clamped")?.as_str() {
        "none" => None,
        "lower" => Some(EpsClamp::Lower),
        "upper" => Some(EpsClamp::Upper),
        other => return Err(perr(0, format!("bad eps_clamped {other:?}"))),
    };
    Ok(EstimationResult {
        n_obs: u("n_obs")?,
        horizon: f("horizon")?,
        sigma_bar2_hat: f("sigma_bar2_hat")?,
        sigma_hat: f("sigma_hat")?,
        m_blocks: u("m_blocks")?,
        alpha2_hat: f("alpha2_hat")?,
        beta_hat: f("beta_hat")?,
        sigma2_hat: f("sigma2_hat")?,
        max_loglik: f("max_loglik")?,
        ties,
        eps_hat: f("eps_hat")?,
        eps_clamped,
        wide_fraction: f("wide_fraction")?,
        n_candidates: u("n_candidates")?,
        excluded: u("excluded")?,
        kernel_builds: u("kernel_builds")?,
        runtime_secs: f("runtime_secs")?,
        config,
        surface,
    })
}

/// Writes per-step filter output: `time,mu,log_normalizer` rows, followed by
/// density snapshots as `step,cell,density` rows when present.
pub fn write_filter_trace<W: Write>(
    out: &mut W,
    output: &crate::filter::FilterOutput,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let wrap = |e| Error::io("writing filter trace", e);
    for (k, v) in extra {
        writeln!(out, "# config.{k}={v}").map_err(wrap)?;
    }
    writeln!(out, "time,mu,log_normalizer").map_err(wrap)?;
    for (i, (t, m)) in output.times.iter().zip(&output.mu).enumerate() {
        let ln = if i == 0 { 0.0 } else { output.log_normalizers[i - 1] };
        writeln!(out, "{t},{m},{ln}").map_err(wrap)?;
    }
    if !output.snapshots.is_empty() {
        writeln!(out).map_err(wrap)?;
        writeln!(out, "step,cell,density").map_err(wrap)?;
        for (step, u) in &output.snapshots {
            for (j, v) in u.iter().enumerate() {
                writeln!(out, "{step},{j},{v}").map_err(wrap)?;
            }
        }
    }
    Ok(())
}
