//! Flat `key = value` run configuration. Values from a config file are read
//! first and `--key value` flags override them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hypodense::fgauss::Hurst;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    SimulateFbm,
    Lift,
    Solve,
    Skeleton,
    Expand,
    Minimize,
    Covariance,
    Hormander,
    Indices,
    Density,
    Asymptotics,
    Verify,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::SimulateFbm,
        Command::Lift,
        Command::Solve,
        Command::Skeleton,
        Command::Expand,
        Command::Minimize,
        Command::Covariance,
        Command::Hormander,
        Command::Indices,
        Command::Density,
        Command::Asymptotics,
        Command::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateFbm => "simulate-fbm",
            Command::Lift => "lift",
            Command::Solve => "solve",
            Command::Skeleton => "skeleton",
            Command::Expand => "expand",
            Command::Minimize => "minimize",
            Command::Covariance => "covariance",
            Command::Hormander => "hormander",
            Command::Indices => "indices",
            Command::Density => "density",
            Command::Asymptotics => "asymptotics",
            Command::Verify => "verify",
        }
    }

    /// Keys this subcommand accepts on top of [`COMMON_KEYS`].
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Command::SimulateFbm => &["paths", "dim"],
            Command::Lift => &["index", "depth"],
            Command::Solve => &["index", "epsilon", "shift"],
            Command::Skeleton => &["direction"],
            Command::Expand => &["index", "kappa_max", "epsilons"],
            Command::Minimize => &["starts", "max_outer", "tol", "hessian_dirs", "multiplier_samples"],
            Command::Covariance => &["epsilons", "samples", "shift"],
            Command::Hormander => &["point", "depth"],
            Command::Indices => &["set", "cutoff"],
            Command::Density => &["t", "method", "samples", "bandwidth", "tilt", "radius", "batches"],
            Command::Asymptotics => &["t", "samples", "bandwidth", "alpha_samples", "sanity"],
            Command::Verify => &["suite", "inject_fault"],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown subcommand `{s}`")))
    }
}

pub const COMMON_KEYS: &[&str] = &[
    "model", "hurst", "m", "seed", "workers", "out", "fields", "sigma", "start", "target",
];

/// Resolved configuration for one subcommand run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

fn parse_lines(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns `--key value` / `--key=value` pairs into key–value entries.
fn parse_flags(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("unexpected argument `{arg}`; options look like --key value")))?;
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("option --{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a configuration from an optional file and flag overrides, then
    /// checks keys and the common invariants.
    pub fn resolve(command: Command, file: Option<&Path>, flags: &[String]) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            for (k, v) in parse_lines(&text, &path.display().to_string())? {
                values.insert(k, v);
            }
        }
        for (k, v) in parse_flags(flags)? {
            values.insert(k, v);
        }
        Self::from_map(command, values)
    }

    pub fn from_map(command: Command, values: BTreeMap<String, String>) -> Result<Self, CliError> {
        for key in values.keys() {
            if !COMMON_KEYS.contains(&key.as_str()) && !command.keys().contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown key `{key}` for {command}")));
            }
        }
        let cfg = Self { command, values };
        let h = cfg.hurst()?.value();
        if !(h > 0.25 && h <= 0.5) {
            return Err(CliError::Config(format!("hurst = {h} must lie in (1/4, 1/2]")));
        }
        let m = cfg.m()?;
        if !m.is_power_of_two() || !(32..=4096).contains(&m) {
            return Err(CliError::Config(format!("m = {m} must be a power of two between 32 and 4096")));
        }
        if cfg.str_or("model", "heisenberg") == "file" && !cfg.has("fields") {
            return Err(CliError::Config("model = file needs the key `fields`".into()));
        }
        Ok(cfg)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| CliError::Config(format!("cannot parse `{key} = {v}`"))))
            .transpose()
    }

    /// Comma-separated list of reals.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("`{key}` must be a comma-separated list of numbers")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(CliError::Config(format!("`{key} = {v}` is not a boolean"))),
        }
    }

    pub fn hurst(&self) -> Result<Hurst, CliError> {
        let s = self.str_or("hurst", "1/2");
        Hurst::parse(s).map_err(|e| CliError::Config(format!("hurst: {e}")))
    }

    pub fn m(&self) -> Result<usize, CliError> {
        self.parse_or("m", 64)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse_or("seed", 0)
    }

    pub fn workers(&self) -> Result<usize, CliError> {
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        let w = self.parse_or("workers", default)?;
        if w == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(w)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str_or("out", "hypodense-out"))
    }

    /// The resolved entries, echoed into manifests.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// `key = value` text that reproduces this configuration.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
