use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MonError, Result};

use super::SweepRecord;

pub const CSV_HEADER: &str = "model,variant,alpha,measure,weight,value,bound,j_det,j_sto,n_samples,seed,error";

/// Round-trip exact scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> MonError {
    MonError::Io(e.into())
}

/// Writes `# key: value` metadata lines, the header and one line per record.
pub fn write_records<W: Write>(mut out: W, meta: &[(&str, String)], records: &[SweepRecord]) -> Result<()> {
    for (k, v) in meta {
        writeln!(out, "# {k}: {v}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.model.clone(),
            r.variant.clone(),
            format_float(r.alpha),
            r.measure.clone(),
            r.weight.clone(),
            opt(r.value),
            opt(r.bound),
            opt(r.j_det),
            opt(r.j_sto),
            r.n_samples.to_string(),
            r.seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn write_records_atomic(path: &Path, meta: &[(&str, String)], records: &[SweepRecord]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_records(std::io::BufWriter::new(tmp.as_file_mut()), meta, records)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| MonError::Io(e.error))?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(MonError::Config(format!("unexpected CSV header '{header}'")));
    }
    let float = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| MonError::Config(format!("bad number '{s}' in CSV")))
    };
    let int = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| MonError::Config(format!("bad integer '{s}' in CSV")))
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != 12 {
            return Err(MonError::Config(format!("CSV row has {} fields", row.len())));
        }
        out.push(SweepRecord {
            model: row[0].to_string(),
            variant: row[1].to_string(),
            alpha: float(&row[2])?.ok_or_else(|| MonError::Config("missing alpha".into()))?,
            measure: row[3].to_string(),
            weight: row[4].to_string(),
            value: float(&row[5])?,
            bound: float(&row[6])?,
            j_det: float(&row[7])?,
            j_sto: float(&row[8])?,
            n_samples: int(&row[9])?,
            seed: int(&row[10])?,
            error: (!row[11].is_empty()).then(|| row[11].to_string()),
        });
    }
    Ok(out)
}
