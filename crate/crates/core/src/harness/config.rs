//! Flat INI-style experiment configuration with CLI overrides.
//!
//! Keys are addressed as `section.key`; `--set section.key=value` overrides
//! file values, and every experiment supplies defaults for the keys it
//! reads, so a config file is optional.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;

/// Resolved configuration: experiment name plus a key-value map.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    experiment: String,
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            values: BTreeMap::new(),
        }
    }

    /// Parses an INI-like file: `[section]` headers, `key = value` lines,
    /// `#` or `;` comments.
    pub fn from_file(experiment: &str, path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::new(experiment);
        cfg.parse_ini(&text)?;
        Ok(cfg)
    }

    pub fn parse_ini(&mut self, text: &str) -> Result<(), HarnessError> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            let full_key = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            self.values.insert(full_key, value.trim().to_string());
        }
        Ok(())
    }

    /// Applies one `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), HarnessError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(HarnessError::Config(format!(
                "override '{assignment}' is not of the form key=value"
            )));
        };
        self.values
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn experiment(&self) -> &str {
        &self.experiment
    }

    pub fn seed(&self) -> u64 {
        self.get_u64("experiment.seed", 0)
    }

    pub fn threads(&self) -> usize {
        self.get_usize("experiment.threads", 0)
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> f64 {
        self.parse_or(key, default)
    }

    /// A float value where the literal `auto` (or absence) selects `None`,
    /// letting the experiment derive the value from the problem.
    pub fn get_f64_auto(&self, key: &str) -> Option<f64> {
        match self.values.get(key).map(String::as_str) {
            None | Some("auto") => None,
            Some(v) => v.parse().ok(),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> usize {
        self.parse_or(key, default)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> u64 {
        self.parse_or(key, default)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> bool {
        match self.values.get(key).map(String::as_str) {
            Some("true") | Some("1") | Some("yes") => true,
            Some("false") | Some("0") | Some("no") => false,
            _ => default,
        }
    }

    pub fn get_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map_or(default, String::as_str)
    }

    /// Comma-separated list of positive integers.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Vec<usize> {
        match self.values.get(key) {
            None => default.to_vec(),
            Some(v) => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        }
    }

    /// Comma-separated list of floats.
    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.values.get(key) {
            None => default.to_vec(),
            Some(v) => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        }
    }

    fn parse_or<T: std::str::FromStr + Copy>(&self, key: &str, default: T) -> T {
        self.values
            .get(key)
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    }

    /// Records a value so the resolved config reflects derived defaults.
    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Serializes back to INI, grouped by section, keys sorted.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# resolved configuration");
        let _ = writeln!(out, "[experiment]");
        let _ = writeln!(out, "name = {}", self.experiment);
        let mut last_section = String::from("experiment");
        for (key, value) in &self.values {
            let (section, name) = key.split_once('.').unwrap_or(("", key.as_str()));
            if section != last_section {
                let _ = writeln!(out, "[{section}]");
                last_section = section.to_string();
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }
}
