use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{MonError, Result};
use crate::models::builtin_info;
use crate::moments::DEFAULT_SAMPLES;

use super::Measure;

/// Upper limit on envelope scan points.
pub const MAX_ENVELOPE_POINTS: usize = 1000;

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// Sweep description, read from TOML.
///
/// ```toml
/// samples = 1000000
/// seed = 2024
/// measures = ["orig_normalized", "diag", "full"]
///
/// [alpha]
/// start = 0.1
/// stop = 10.0
/// points = 15
///
/// [[models]]
/// name = "gmti"
/// variants = ["m-rad-mps", "km-deg-kmh"]
///
/// [envelope]            # optional
/// model = "cart2polar_rad"
/// output = 1
/// min_exponent = -10.0
/// max_exponent = 10.0
/// points = 61
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Measures applied to every model without its own list.
    #[serde(default)]
    pub measures: Vec<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub alpha: AlphaGrid,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub envelope: Option<EnvelopeSpec>,
}

/// Log-spaced grid from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    /// Output unit variants; empty means the default variant only.
    #[serde(default)]
    pub variants: Vec<String>,
    #[serde(default)]
    pub measures: Option<Vec<String>>,
}

fn default_output() -> usize {
    1
}
fn default_min_exponent() -> f64 {
    -10.0
}
fn default_max_exponent() -> f64 {
    10.0
}
fn default_envelope_points() -> usize {
    61
}

/// Per-alpha min/max of the normalized original MoN while one output is
/// rescaled by factors `10^e`, `e` evenly spaced in the exponent range.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub model: String,
    #[serde(default = "default_output")]
    pub output: usize,
    #[serde(default = "default_min_exponent")]
    pub min_exponent: f64,
    #[serde(default = "default_max_exponent")]
    pub max_exponent: f64,
    #[serde(default = "default_envelope_points")]
    pub points: usize,
}

impl EnvelopeSpec {
    pub fn scale_factors(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![10f64.powf(self.min_exponent)];
        }
        let step = (self.max_exponent - self.min_exponent) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| 10f64.powf(self.min_exponent + step * i as f64))
            .collect()
    }
}

pub fn alpha_grid(grid: &AlphaGrid) -> Result<Vec<f64>> {
    let AlphaGrid { start, stop, points } = *grid;
    if !(start > 0.0) || !start.is_finite() || !stop.is_finite() {
        return Err(MonError::Config(format!(
            "alpha range must be positive and finite, got [{start}, {stop}]"
        )));
    }
    if points == 0 {
        return Err(MonError::Config("alpha grid needs at least one point".into()));
    }
    if points == 1 {
        return Ok(vec![start]);
    }
    if !(stop > start) {
        return Err(MonError::Config(format!(
            "alpha grid must increase, got start {start} stop {stop}"
        )));
    }
    let (a, b) = (start.log10(), stop.log10());
    let step = (b - a) / (points - 1) as f64;
    let values: Vec<f64> = (0..points).map(|i| 10f64.powf(a + step * i as f64)).collect();
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MonError::Config("alpha grid is not strictly increasing".into()));
    }
    Ok(values)
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MonError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MonError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parsed measures for one model entry, checked against its output size.
    pub(crate) fn measures_for(&self, entry: &ModelEntry) -> Result<Vec<Measure>> {
        let names = entry.measures.as_ref().unwrap_or(&self.measures);
        if names.is_empty() {
            return Err(MonError::Config(format!(
                "no measures requested for model '{}'",
                entry.name
            )));
        }
        let n_y = builtin_info(&entry.name)?.n_y;
        names
            .iter()
            .map(|s| {
                let m: Measure = s.parse()?;
                m.validate()?;
                if let Measure::Family { alphas, .. } = &m {
                    if alphas.len() != n_y {
                        return Err(MonError::Config(format!(
                            "measure '{s}' has {} weights but '{}' has {n_y} outputs",
                            alphas.len(),
                            entry.name
                        )));
                    }
                }
                Ok(m)
            })
            .collect()
    }

    pub(crate) fn variants_for(&self, entry: &ModelEntry) -> Result<Vec<String>> {
        let info = builtin_info(&entry.name)?;
        if entry.variants.is_empty() {
            return Ok(vec![info.variants[0].to_string()]);
        }
        for v in &entry.variants {
            if !info.variants.contains(&v.as_str()) {
                return Err(MonError::UnknownVariant {
                    model: entry.name.clone(),
                    variant: v.clone(),
                });
            }
        }
        Ok(entry.variants.clone())
    }

    pub(crate) fn validate_envelope(&self) -> Result<()> {
        let Some(env) = &self.envelope else {
            return Ok(());
        };
        let info = builtin_info(&env.model)?;
        if env.output >= info.n_y {
            return Err(MonError::Config(format!(
                "envelope output {} out of range for '{}'",
                env.output, env.model
            )));
        }
        if !env.min_exponent.is_finite() || !env.max_exponent.is_finite() {
            return Err(MonError::Config("envelope exponents must be finite".into()));
        }
        if env.points == 0 || env.points > MAX_ENVELOPE_POINTS {
            return Err(MonError::Config(format!(
                "envelope needs 1..={MAX_ENVELOPE_POINTS} points, got {}",
                env.points
            )));
        }
        if env.points > 1 && !(env.max_exponent > env.min_exponent) {
            return Err(MonError::Config("envelope exponent range is empty".into()));
        }
        Ok(())
    }
}
