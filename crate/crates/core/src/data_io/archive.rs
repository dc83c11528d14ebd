//! Model archives: a directory holding `manifest.txt`, `X.csv`, `Z.csv`
//! and optionally the cached `L.csv` and `K_inv.csv`.
//!
//! Loading always recomputes `L` and `K_inv` from `X` and `Z`; a cache that
//! disagrees by more than 1e-10 is reported as corruption.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;

use super::csv::{read_points, write_points};
use super::write_atomic;
use crate::error::{KpfError, Result};
use crate::kernels::{param, parse_params, reject_unknown, KernelSpec};
use crate::numerics::HyperpowerOptions;
use crate::operator::{fit_with_draws, FitOptions, InverseStrategy, KpfModel, PriorDistribution, PriorSpec};
use crate::points::PointSet;

pub const ARCHIVE_VERSION: &str = "1";

const MANIFEST: &str = "manifest.txt";
const CACHE_TOL: f64 = 1e-10;

fn inverse_to_string(s: InverseStrategy) -> String {
    match s {
        InverseStrategy::Auto => "auto".into(),
        InverseStrategy::ExactPinv => "exact-pinv".into(),
        InverseStrategy::Hyperpower(HyperpowerOptions { max_iters, tol }) => match tol {
            Some(t) => format!("hyperpower:max_iters={max_iters},tol={t:?}"),
            None => format!("hyperpower:max_iters={max_iters}"),
        },
    }
}

fn inverse_from_str(s: &str) -> Result<InverseStrategy> {
    let (name, p) = parse_params(s)?;
    match name {
        "auto" => Ok(InverseStrategy::Auto),
        "exact-pinv" => Ok(InverseStrategy::ExactPinv),
        "hyperpower" => {
            reject_unknown(&p, &["max_iters", "tol"], s)?;
            Ok(InverseStrategy::Hyperpower(HyperpowerOptions {
                max_iters: param(&p, "max_iters", s)?.unwrap_or(10),
                tol: param(&p, "tol", s)?,
            }))
        }
        other => Err(KpfError::invalid(format!("unknown inverse strategy `{other}`"))),
    }
}

fn created_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

fn matrix_as_points(m: &DMatrix<f64>) -> PointSet {
    PointSet::from_row_matrix(m)
}

/// Writes `model` to `dir` (created if missing). With `cache`, the fitted
/// `L` and `K_inv` are stored too.
pub fn save_model(model: &KpfModel, dir: &Path, cache: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| KpfError::io(dir, e))?;
    write_points(model.data(), &dir.join("X.csv"))?;
    write_points(model.prior_draws(), &dir.join("Z.csv"))?;
    if cache {
        write_points(&matrix_as_points(model.l()), &dir.join("L.csv"))?;
        write_points(&matrix_as_points(&model.k_inv().matrix), &dir.join("K_inv.csv"))?;
    } else {
        for f in ["L.csv", "K_inv.csv"] {
            let p = dir.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| KpfError::io(&p, e))?;
            }
        }
    }
    let mut m = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(m, "{k} = {v}");
    };
    kv("version", &ARCHIVE_VERSION);
    kv("n", &model.n());
    kv("d_x", &model.data().dim());
    kv("d_z", &model.prior_draws().dim());
    kv("input_kernel", model.input_kernel());
    kv("output_kernel", model.output_kernel());
    kv("lambda", &format!("{:?}", model.lambda()));
    kv("prior", &model.prior().distribution);
    kv("seed", &model.prior().seed);
    kv("inverse", &inverse_to_string(model.inverse_strategy()));
    kv("normalize_sphere", &model.data_on_sphere());
    kv("created", &created_timestamp());
    // Manifest last: its presence marks a complete archive.
    write_atomic(&dir.join(MANIFEST), |w| {
        w.write_all(m.as_bytes()).map_err(|e| KpfError::io(dir.join(MANIFEST), e))
    })
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| KpfError::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| KpfError::Archive(format!("manifest is missing `{key}`")))
}

fn parsed<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = field(map, key)?;
    v.parse()
        .map_err(|_| KpfError::Archive(format!("manifest `{key}` has invalid value `{v}`")))
}

fn check_shape(what: &str, p: &PointSet, rows: usize, cols: usize) -> Result<()> {
    if p.len() != rows || p.dim() != cols {
        return Err(KpfError::Archive(format!(
            "{what} is {}×{}, manifest says {rows}×{cols}",
            p.len(),
            p.dim()
        )));
    }
    Ok(())
}

fn verify_cache(dir: &Path, name: &str, fresh: &DMatrix<f64>) -> Result<()> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(());
    }
    let cached = read_points(&path)?;
    let n = fresh.nrows();
    check_shape(name, &cached, n, fresh.ncols())?;
    let cached = cached.to_row_matrix();
    let scale = fresh.amax().max(1.0);
    let diff = (&cached - fresh).amax();
    if diff > CACHE_TOL * scale {
        return Err(KpfError::Archive(format!(
            "cached {name} differs from recomputation by {diff:e}"
        )));
    }
    Ok(())
}

/// Loads and re-fits a model archive, checking the manifest against the
/// stored matrices and any cached Gram inverses.
pub fn load_model(dir: &Path) -> Result<KpfModel> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| KpfError::io(&mpath, e))?;
    let map = parse_manifest(&text)?;
    let version = field(&map, "version")?;
    if version != ARCHIVE_VERSION {
        return Err(KpfError::UnsupportedVersion {
            found: version.to_string(),
            expected: ARCHIVE_VERSION.to_string(),
        });
    }
    let n: usize = parsed(&map, "n")?;
    let d_x: usize = parsed(&map, "d_x")?;
    let d_z: usize = parsed(&map, "d_z")?;
    let input: KernelSpec = field(&map, "input_kernel")?.parse()?;
    let output: KernelSpec = field(&map, "output_kernel")?.parse()?;
    let lambda: f64 = parsed(&map, "lambda")?;
    let seed: u64 = parsed(&map, "seed")?;
    let distribution = PriorDistribution::parse(field(&map, "prior")?, d_z)?;
    if distribution.dim() != d_z {
        return Err(KpfError::Archive(format!(
            "prior dimension {} disagrees with d_z = {d_z}",
            distribution.dim()
        )));
    }
    let inverse = match map.get("inverse") {
        Some(s) => inverse_from_str(s)?,
        None => InverseStrategy::Auto,
    };

    let x = read_points(&dir.join("X.csv"))?;
    let z = read_points(&dir.join("Z.csv"))?;
    check_shape("X.csv", &x, n, d_x)?;
    check_shape("Z.csv", &z, n, d_z)?;

    let prior = PriorSpec { distribution, seed };
    let opts = FitOptions {
        lambda: Some(lambda),
        inverse,
        pinv_fallback: true,
    };
    let model = fit_with_draws(&x, z, &prior, input, output, &opts)?;
    verify_cache(dir, "L.csv", model.l())?;
    verify_cache(dir, "K_inv.csv", &model.k_inv().matrix)?;
    Ok(model)
}
