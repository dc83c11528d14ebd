//! Toy data, CSV point-set exchange, spherical normalization and model
//! archives.

mod archive;
mod csv;
mod toy;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use archive::{load_model, save_model, ARCHIVE_VERSION};
pub use csv::{read_points, write_points, write_points_to};
pub use toy::{checkerboard_cell_on, generate_toy, ToyDistribution, ToySpec};

use crate::error::{KpfError, Result};
use crate::points::{norm, PointSet};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| KpfError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| KpfError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        let file = w.into_inner().map_err(|e| KpfError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| KpfError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| KpfError::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Divides every point by its Euclidean norm.
pub fn normalize_to_sphere(points: &PointSet) -> Result<PointSet> {
    let mut out = points.clone();
    for i in 0..out.len() {
        let p = out.point_mut(i);
        let r = norm(p);
        if r == 0.0 {
            return Err(KpfError::Domain(format!("point {i} is the zero vector")));
        }
        p.iter_mut().for_each(|v| *v /= r);
    }
    Ok(out)
}
