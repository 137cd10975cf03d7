//! Run configuration: a TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use afsc_core::bank::{generate_synthetic_bank, BankFormat, FeatureBank, SyntheticSpec};
use afsc_core::criteria::OracleConfig;
use afsc_core::{BenchmarkConfig, EmConfig, PipelineConfig, SmoothingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where episode features come from: a bank file or a synthetic mixture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankSection {
    pub path: Option<PathBuf>,
    /// Defaults to the file extension (`.csv` is text, anything else binary).
    pub format: Option<BankFormat>,
    pub synthetic: Option<SyntheticSpec>,
}

impl BankSection {
    pub fn load(&self) -> Result<FeatureBank, CliError> {
        match (&self.path, &self.synthetic) {
            (Some(path), None) => {
                let format = self.format.unwrap_or_else(|| BankFormat::from_path(path));
                Ok(FeatureBank::load(path, format)?)
            }
            (None, Some(spec)) => Ok(generate_synthetic_bank(spec)?),
            (Some(_), Some(_)) => Err(CliError::Config(
                "bank: set either `path` or `[bank.synthetic]`, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "bank: no bank configured; set `bank.path` or `[bank.synthetic]`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    pub labels: Vec<usize>,
    pub samples: Vec<usize>,
    pub alphas: Vec<f64>,
    pub active: String,
    pub baseline: String,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            labels: vec![5, 10, 20, 50],
            samples: vec![20, 40, 80, 100],
            alphas: vec![2.0],
            active: "lss".into(),
            baseline: "random".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bank: BankSection,
    pub smoothing: SmoothingConfig,
    pub em: EmConfig,
    pub oracle: OracleConfig,
    pub bench: BenchmarkConfig,
    pub heatmap: HeatmapSection,
    /// Strategies run by `bench` and `episode`.
    pub strategies: Vec<String>,
    /// Output directory.
    pub output: PathBuf,
    /// 0 silences progress messages on stderr.
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bank: BankSection::default(),
            smoothing: SmoothingConfig::default(),
            em: EmConfig::default(),
            oracle: OracleConfig::default(),
            bench: BenchmarkConfig::default(),
            heatmap: HeatmapSection::default(),
            strategies: vec!["random".into(), "lss".into()],
            output: PathBuf::from("results"),
            verbosity: 1,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |section: &str, msg: String| Err(CliError::Config(format!("{section}: {msg}")));
        if let Err(e) = self.smoothing.validate() {
            return bad("smoothing", e.to_string());
        }
        if let Err(e) = self.em.validate() {
            return bad("em", e.to_string());
        }
        if let Err(e) = self.bench.validate() {
            return bad("bench", e.to_string());
        }
        if let Some(spec) = &self.bank.synthetic {
            if let Err(e) = spec.validate() {
                return bad("bank.synthetic", e.to_string());
            }
        }
        if self.strategies.is_empty() {
            return bad("strategies", "at least one strategy is required".into());
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            smoothing: self.smoothing.clone(),
            em: self.em.clone(),
            oracle: self.oracle.clone(),
        }
    }
}

/// Sets `section.key=value`, parsing `value` as a TOML value and falling back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override `{spec}` is not of the form key=value"))
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "override `{spec}` has an empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for part in parents {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{spec}`: `{part}` is not a section"))
        })?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
