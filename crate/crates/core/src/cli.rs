//! Command-line front end. Exit codes: 0 success, 1 invalid input,
//! 2 numerical failure.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::bench::{run_point, run_sweep, write_records, Measure, PointSpec, SweepConfig};
use crate::error::MonError;
use crate::models::BUILTINS;
use crate::moments::DEFAULT_SAMPLES;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mon", about = "Measures of nonlinearity for stochastic transformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one (model, alpha, measure) point and print it as CSV.
    Compute {
        #[arg(long)]
        model: String,
        /// Output unit variant; defaults to the model's first variant.
        #[arg(long)]
        units: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// orig, orig_normalized, diag, full or family(a1,...;r12,...).
        #[arg(long, default_value = "full")]
        measure: String,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a sweep described by a TOML config and write CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `out`; stdout when neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in models.
    Models,
}

fn exit_code(e: &MonError) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_VALIDATION
                }
            };
        }
    };
    let result = match cli.command {
        Command::Compute {
            model,
            units,
            alpha,
            measure,
            samples,
            seed,
        } => compute(model, units, alpha, &measure, samples, seed, out),
        Command::Sweep { config, out: path } => sweep(&config, path, out),
        Command::Models => models(out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn compute(
    model: String,
    units: Option<String>,
    alpha: f64,
    measure: &str,
    samples: usize,
    seed: u64,
    out: &mut dyn Write,
) -> crate::Result<i32> {
    let measure: Measure = measure.parse()?;
    let spec = PointSpec {
        model,
        variant: units,
        alpha,
        samples,
        base_seed: seed,
    };
    let records = run_point(&spec, std::slice::from_ref(&measure))?;
    write_records(&mut *out, &[], &records)?;
    Ok(if records.iter().any(|r| r.error.is_some()) {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    })
}

fn sweep(config: &std::path::Path, path: Option<PathBuf>, out: &mut dyn Write) -> crate::Result<i32> {
    let config = SweepConfig::from_path(config)?;
    let sweep = run_sweep(&config)?;
    match path.or_else(|| config.out.clone()) {
        Some(p) => sweep.write_csv_file(&p)?,
        None => sweep.write_csv(&mut *out)?,
    }
    Ok(if sweep.records.iter().any(|r| r.error.is_some()) {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    })
}

fn models(out: &mut dyn Write) -> crate::Result<i32> {
    for b in BUILTINS {
        writeln!(
            out,
            "{:<16} n_u={} n_y={} units={:<22} {}",
            b.name,
            b.n_u,
            b.n_y,
            b.variants.join("|"),
            b.description
        )?;
    }
    Ok(EXIT_OK)
}
