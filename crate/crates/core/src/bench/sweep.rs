use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{MonError, Result};
use crate::moments::{MomentEstimates, CHUNK_SIZE};

use super::config::{alpha_grid, EnvelopeSpec, SweepConfig};
use super::csv_io::{format_float, write_records, write_records_atomic};
use super::{run_point, Measure, PointSpec, SweepRecord};

/// Measure label of envelope rows; `value` holds the minimum and `bound`
/// the maximum over the scan.
pub const ENVELOPE_MEASURE: &str = "envelope";

/// Completed sweep: the validated plan and its rows in output order.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub config: SweepConfig,
    pub alphas: Vec<f64>,
    pub records: Vec<SweepRecord>,
}

impl Sweep {
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        let mut meta = vec![
            ("samples", self.config.samples.to_string()),
            ("base_seed", self.config.seed.to_string()),
            ("chunk_size", CHUNK_SIZE.to_string()),
            (
                "alpha_grid",
                format!(
                    "{} {} {}",
                    format_float(self.config.alpha.start),
                    format_float(self.config.alpha.stop),
                    self.config.alpha.points
                ),
            ),
        ];
        if let Some(env) = &self.config.envelope {
            meta.push((
                "envelope",
                format!(
                    "{} output {} exponents {} {} points {}",
                    env.model, env.output, env.min_exponent, env.max_exponent, env.points
                ),
            ));
        }
        meta
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_records(out, &self.metadata(), &self.records)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        write_records_atomic(path, &self.metadata(), &self.records)
    }
}

struct Task {
    model: String,
    variant: String,
    alpha: f64,
    measures: Vec<Measure>,
}

/// Checks the whole config and expands it into evaluation points, in
/// output order, before anything is sampled.
fn plan(config: &SweepConfig) -> Result<(Vec<f64>, Vec<Task>)> {
    if config.samples < 2 {
        return Err(MonError::Config("samples must be at least 2".into()));
    }
    if config.models.is_empty() {
        return Err(MonError::Config("no models requested".into()));
    }
    let alphas = alpha_grid(&config.alpha)?;
    config.validate_envelope()?;
    let mut tasks = Vec::new();
    for entry in &config.models {
        let measures = config.measures_for(entry)?;
        let variants = config.variants_for(entry)?;
        for &alpha in &alphas {
            for variant in &variants {
                tasks.push(Task {
                    model: entry.name.clone(),
                    variant: variant.clone(),
                    alpha,
                    measures: measures.clone(),
                });
            }
        }
    }
    Ok((alphas, tasks))
}

/// Min and max of the normalized original MoN while output `env.output`
/// is multiplied by each scan factor.
pub fn envelope_row(spec: &PointSpec, env: &EnvelopeSpec) -> Result<SweepRecord> {
    let variant = spec.variant_label()?;
    let seed = spec.seed()?;
    let outcome = spec.estimate().and_then(|est| envelope_range(&est, env)).map_err(|e| {
        if e.is_validation() {
            Err(e)
        } else {
            Ok(e.to_string())
        }
    });
    let (min, max, error) = match outcome {
        Ok((lo, hi)) => (Some(lo), Some(hi), None),
        Err(Err(e)) => return Err(e),
        Err(Ok(msg)) => (None, None, Some(msg)),
    };
    Ok(SweepRecord {
        model: spec.model.clone(),
        variant,
        alpha: spec.alpha,
        measure: ENVELOPE_MEASURE.to_string(),
        weight: "legacy_normalized".to_string(),
        value: min,
        bound: max,
        j_det: None,
        j_sto: None,
        n_samples: spec.samples as u64,
        seed,
        error,
    })
}

fn envelope_range(est: &MomentEstimates, env: &EnvelopeSpec) -> Result<(f64, f64)> {
    let n_y = est.n_y();
    if env.output >= n_y {
        return Err(MonError::Config(format!("envelope output {} out of range", env.output)));
    }
    let offset = DVector::zeros(n_y);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for factor in env.scale_factors() {
        let mut s_inv = DMatrix::identity(n_y, n_y);
        s_inv[(env.output, env.output)] = factor;
        let value = Measure::OrigNormalized
            .compute(&est.transform_output(&s_inv, &offset)?)?
            .value;
        lo = lo.min(value);
        hi = hi.max(value);
    }
    Ok((lo, hi))
}

/// Runs every `(model, alpha, variant, measure)` point of the config, then
/// the envelope scan if requested. Rows are ordered by model, alpha,
/// variant and measure, with envelope rows last, independent of thread
/// scheduling.
pub fn run_sweep(config: &SweepConfig) -> Result<Sweep> {
    let (alphas, tasks) = plan(config)?;
    let point = |model: &str, variant: Option<&str>, alpha: f64| PointSpec {
        model: model.to_string(),
        variant: variant.map(String::from),
        alpha,
        samples: config.samples,
        base_seed: config.seed,
    };
    let rows: Vec<Vec<SweepRecord>> = tasks
        .par_iter()
        .map(|t| run_point(&point(&t.model, Some(&t.variant), t.alpha), &t.measures))
        .collect::<Result<_>>()?;
    let mut records: Vec<SweepRecord> = rows.into_iter().flatten().collect();
    if let Some(env) = &config.envelope {
        let env_rows: Vec<SweepRecord> = alphas
            .par_iter()
            .map(|&alpha| envelope_row(&point(&env.model, None, alpha), env))
            .collect::<Result<_>>()?;
        records.extend(env_rows);
    }
    Ok(Sweep {
        config: config.clone(),
        alphas,
        records,
    })
}
