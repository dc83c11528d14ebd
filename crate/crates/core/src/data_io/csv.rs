use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{KpfError, Result};
use crate::points::PointSet;

/// Writes `dim_0,…,dim_{d−1}` then one point per row. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_points_to(points: &PointSet, out: &mut dyn Write) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(out);
    w.write_record((0..points.dim()).map(|i| format!("dim_{i}")))?;
    for p in points.iter() {
        w.write_record(p.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| KpfError::io("<csv output>", e))?;
    Ok(())
}

/// Atomically writes a point set to `path`.
pub fn write_points(points: &PointSet, path: &Path) -> Result<()> {
    super::write_atomic(path, |w| write_points_to(points, w))
}

pub(crate) fn read_points_from(input: impl Read) -> Result<PointSet> {
    let mut r = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(input);
    let dim = r.headers()?.len();
    let mut flat = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim {
            return Err(KpfError::Parse {
                line,
                message: format!("expected {dim} columns, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| KpfError::Parse {
                line,
                message: format!("column {col}: `{cell}` is not a number"),
            })?;
            flat.push(v);
        }
    }
    if dim == 0 {
        return Err(KpfError::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    Ok(PointSet::from_flat(dim, flat))
}

/// Reads a CSV point set with a header row.
pub fn read_points(path: &Path) -> Result<PointSet> {
    let file = File::open(path).map_err(|e| KpfError::io(path, e))?;
    read_points_from(std::io::BufReader::new(file)).map_err(|e| match e {
        KpfError::Parse { line, message } => KpfError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
