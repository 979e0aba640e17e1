//! Flat `key = value` run configuration.
//!
//! The format is deliberately minimal: one setting per line, `#` starts
//! a comment line, keys are fixed, unknown keys are rejected. Manifests
//! emitted next to run outputs use the same syntax plus a small set of
//! informational keys, so a manifest can be fed straight back in as a
//! config to reproduce a run.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{PhotonDistribution, PhotonMode, SearchConfig, SearchParams};

/// Keys a config file may set.
pub const CONFIG_KEYS: [&str; 12] = [
    "N",
    "j",
    "s",
    "lambda",
    "delta",
    "n_min",
    "n_max",
    "photon_mode",
    "dt_factor",
    "t_end_over_tau",
    "sample_every",
    "seed",
];

/// Informational manifest keys, accepted and ignored on re-parse.
pub const INFO_KEYS: [&str; 7] = [
    "version",
    "command",
    "dt",
    "n_steps",
    "sample_every_used",
    "duration_s",
    "max_norm_drift",
];

/// Parsed run settings with defaults for every omitted key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub n_levels: usize,
    pub j: usize,
    pub s: usize,
    pub lambda: f64,
    pub delta: f64,
    pub n_min: u32,
    pub n_max: u32,
    pub photon_mode: PhotonMode,
    pub dt_factor: f64,
    pub t_end_over_tau: f64,
    /// `None` lets the integrator pick ~4000 samples.
    pub sample_every: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            n_levels: 50,
            j: 10,
            s: 32,
            lambda: 1.0,
            delta: 1e4,
            n_min: 0,
            n_max: 9,
            photon_mode: PhotonMode::Mixture,
            dt_factor: 1.0,
            t_end_over_tau: 2.0,
            sample_every: None,
            seed: None,
        }
    }
}

impl RunSettings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse `key = value` text. Unknown keys are errors; informational
    /// manifest keys are accepted and ignored; duplicates are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if INFO_KEYS.contains(&key) {
                continue;
            }
            let canonical = CONFIG_KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| Error::Config(format!("line {}: unknown key '{key}'", line_no + 1)))?;
            if seen.contains(canonical) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    line_no + 1
                )));
            }
            seen.push(canonical);
            settings.set(key, value, line_no + 1)?;
        }
        Ok(settings)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("line {line}: {key} must be {what}, got '{value}'"));
        match key {
            "N" => self.n_levels = value.parse().map_err(|_| bad("a positive integer"))?,
            "j" => self.j = value.parse().map_err(|_| bad("a positive integer"))?,
            "s" => self.s = value.parse().map_err(|_| bad("a positive integer"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("a number"))?,
            "delta" => self.delta = value.parse().map_err(|_| bad("a number"))?,
            "n_min" => self.n_min = value.parse().map_err(|_| bad("a non-negative integer"))?,
            "n_max" => self.n_max = value.parse().map_err(|_| bad("a non-negative integer"))?,
            "photon_mode" => self.photon_mode = value.parse()?,
            "dt_factor" => self.dt_factor = value.parse().map_err(|_| bad("a number"))?,
            "t_end_over_tau" => {
                self.t_end_over_tau = value.parse().map_err(|_| bad("a number"))?
            }
            "sample_every" => {
                self.sample_every = match value {
                    "auto" | "0" => None,
                    other => Some(other.parse().map_err(|_| bad("'auto' or a positive integer"))?),
                }
            }
            "seed" => {
                self.seed = match value {
                    "none" => None,
                    other => Some(other.parse().map_err(|_| bad("'none' or an unsigned integer"))?),
                }
            }
            _ => unreachable!("key filtered above"),
        }
        Ok(())
    }

    /// Render back to the config syntax; `parse(render()) == self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("N = {}\n", self.n_levels));
        out.push_str(&format!("j = {}\n", self.j));
        out.push_str(&format!("s = {}\n", self.s));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("delta = {}\n", self.delta));
        out.push_str(&format!("n_min = {}\n", self.n_min));
        out.push_str(&format!("n_max = {}\n", self.n_max));
        out.push_str(&format!("photon_mode = {}\n", self.photon_mode));
        out.push_str(&format!("dt_factor = {}\n", self.dt_factor));
        out.push_str(&format!("t_end_over_tau = {}\n", self.t_end_over_tau));
        match self.sample_every {
            Some(n) => out.push_str(&format!("sample_every = {n}\n")),
            None => out.push_str("sample_every = auto\n"),
        }
        match self.seed {
            Some(s) => out.push_str(&format!("seed = {s}\n")),
            None => out.push_str("seed = none\n"),
        }
        out
    }

    /// Validate and derive the full model configuration.
    pub fn to_search_config(&self) -> Result<SearchConfig> {
        if !(self.dt_factor > 0.0) || !self.dt_factor.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "dt_factor must be positive, got {}",
                self.dt_factor
            )));
        }
        if !(self.t_end_over_tau > 0.0) || !self.t_end_over_tau.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "t_end_over_tau must be positive, got {}",
                self.t_end_over_tau
            )));
        }
        let photons = PhotonDistribution::uniform(self.n_min, self.n_max)?;
        SearchConfig::new(SearchParams {
            n_levels: self.n_levels,
            j: self.j,
            s: self.s,
            lambda: self.lambda,
            delta: self.delta,
            photons,
            photon_mode: self.photon_mode,
        })
    }
}

/// Comma-separated floats, e.g. `5e3,1e4,1e6`.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    let items: Vec<f64> = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("'{s}' is not a number")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config("empty number list".into()));
    }
    Ok(items)
}

/// Comma-separated positive integers, e.g. `10,20,30,50,80`.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("'{s}' is not a positive integer")))
        })
        .collect()
}
