//! Bundled model fixtures and user-supplied field files.

use hypodense::fgauss::{FbmSpec, Hurst};
use hypodense::fields::{PolynomialFields, VectorFieldSystem};

use crate::config::RunConfig;
use crate::error::{in_module, CliError};

pub struct Model {
    pub name: String,
    pub fields: PolynomialFields,
    pub start: Vec<f64>,
    pub target: Vec<f64>,
    /// Lognormal volatility, kept for the closed-form density.
    pub sigma: Option<f64>,
}

impl Model {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let name = cfg.str_or("model", "heisenberg").to_string();
        let mut sigma = None;
        let (fields, start, target) = match name.as_str() {
            "heisenberg" => (PolynomialFields::heisenberg(), vec![0.0; 3], vec![1.0, 0.5, 0.0]),
            "lognormal" => {
                let s: f64 = cfg.parse_or("sigma", 0.5)?;
                if s.is_nan() || s <= 0.0 {
                    return Err(CliError::Config(format!("sigma = {s} must be positive")));
                }
                sigma = Some(s);
                (PolynomialFields::lognormal(s), vec![1.0], vec![1.5])
            }
            "bridge1d" => (PolynomialFields::bridge1d(), vec![0.0], vec![1.0]),
            "file" => {
                let path = cfg.str_or("fields", "");
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read fields file {path}: {e}")))?;
                let f = PolynomialFields::parse(&text).map_err(in_module("fields"))?;
                let n = f.state_dim();
                let mut target = vec![0.0; n];
                target[0] = 1.0;
                (f, vec![0.0; n], target)
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown model `{other}` (heisenberg, lognormal, bridge1d or file)"
                )))
            }
        };
        let n = fields.state_dim();
        let start = cfg.list("start")?.unwrap_or(start);
        let target = cfg.list("target")?.unwrap_or(target);
        for (key, v) in [("start", &start), ("target", &target)] {
            if v.len() != n {
                return Err(CliError::Config(format!("{key} needs {n} components for model {name}")));
            }
        }
        Ok(Self { name, fields, start, target, sigma })
    }

    pub fn spec(&self, cfg: &RunConfig) -> Result<FbmSpec, CliError> {
        FbmSpec::new(cfg.hurst()?, self.fields.noise_dim(), cfg.m()?).map_err(in_module("fgauss"))
    }

    /// Closed-form p_t(start, target) where one is known.
    pub fn exact_density(&self, t: f64, hurst: Hurst) -> Option<f64> {
        let s = t.powf(hurst.value());
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        match (self.name.as_str(), self.sigma) {
            ("lognormal", Some(sigma)) => {
                let (a, y) = (self.start[0], self.target[0]);
                if a <= 0.0 || y <= 0.0 {
                    return None;
                }
                let z = (y / a).ln() / (sigma * s);
                Some((-0.5 * z * z).exp() / (y * sigma * s * norm))
            }
            ("bridge1d", _) => {
                let z = (self.target[0] - self.start[0]) / s;
                Some((-0.5 * z * z).exp() / (s * norm))
            }
            _ => None,
        }
    }
}
