//! Flag/config-file resolution. A value given on the command line wins over
//! the config file, which wins over the built-in default; every resolved
//! value is recorded for embedding in artifacts.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use latent_price::io::load_key_values;

/// Error in the invocation itself (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Keys accepted in a config file, spelled as on the command line minus
/// the leading dashes (underscores are accepted for dashes).
const KNOWN_KEYS: &[&str] = &[
    "theta",
    "sigma-bar2",
    "eps",
    "T",
    "dt-sim",
    "dt-obs",
    "seed",
    "x0",
    "input",
    "out",
    "surface-out",
    "grid-alpha2",
    "grid-sigma2",
    "m-blocks",
    "cells",
    "route",
    "snapshot-every",
    "session_open",
    "window_start",
    "window_end",
    "step",
    "max_gap",
];

fn normalize(key: &str) -> String {
    if key.starts_with("session") || key.starts_with("window") || key == "max_gap" {
        return key.to_string();
    }
    key.replace('_', "-")
}

pub struct Overlay {
    file: BTreeMap<String, String>,
    raw: BTreeMap<String, String>,
    /// Resolved values, keyed like the flags.
    pub effective: BTreeMap<String, String>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let raw = match path {
            Some(p) => load_key_values(p)?,
            None => BTreeMap::new(),
        };
        let mut file = BTreeMap::new();
        for (k, v) in &raw {
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("unknown key '{k}' in config file")));
            }
            file.insert(key, v.clone());
        }
        let mut effective = BTreeMap::new();
        if let Some(p) = path {
            effective.insert("config".into(), p.display().to_string());
        }
        Ok(Self { file, raw, effective })
    }

    /// The config file as read, for consumers with their own key sets.
    pub fn raw(&self) -> &BTreeMap<String, String> {
        &self.raw
    }

    /// Flag value, else config-file value, else `None`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(
                    s.parse::<T>()
                        .map_err(|e| usage(format!("config key '{key}': {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.get(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.effective.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.get(key, flag)?
            .ok_or_else(|| usage(format!("--{key} is required (flag or config file)")))
    }

    pub fn note(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }
}

/// `--theta a,b,s2`: α, β, σ².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
}

impl FromStr for Theta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("expected alpha,beta,sigma2, got {s:?}"))?;
        match v[..] {
            [alpha, beta, sigma2] => Ok(Self { alpha, beta, sigma2 }),
            _ => Err(format!("expected three comma-separated numbers, got {s:?}")),
        }
    }
}

impl Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.alpha, self.beta, self.sigma2)
    }
}

/// `--x0`: a fixed latent price or `cell:N` for a uniform start in [N, N+1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartPrice(pub latent_price::InitialPrice);

impl FromStr for StartPrice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        use latent_price::InitialPrice;
        match s.strip_prefix("cell:") {
            Some(c) => c
                .trim()
                .parse()
                .map(|c| StartPrice(InitialPrice::UniformInCell(c)))
                .map_err(|_| format!("bad cell in {s:?}")),
            None => s
                .trim()
                .parse()
                .map(|x| StartPrice(InitialPrice::Fixed(x)))
                .map_err(|_| format!("expected a price or cell:N, got {s:?}")),
        }
    }
}

impl Display for StartPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            latent_price::InitialPrice::Fixed(x) => write!(f, "{x}"),
            latent_price::InitialPrice::UniformInCell(c) => write!(f, "cell:{c}"),
        }
    }
}
