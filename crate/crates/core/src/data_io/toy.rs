use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{KpfError, Result};
use crate::kernels::{param, parse_params, reject_unknown};
use crate::points::PointSet;

/// Two-dimensional toy densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ToyDistribution {
    /// `r(cos θ, sin θ) + noise·N(0, I)`.
    Ring { radius: f64, noise: f64 },
    TwoMoons { noise: f64 },
    /// Spiral arms with radial spread 0.3 and tangential spread `noise`.
    Pinwheel { arms: u32, noise: f64 },
    /// Uniform over the "on" cells of a `cells × cells` board on `[-2, 2]²`.
    Checkerboard { cells: u32 },
    /// Isotropic Gaussians centred on a `rows × cols` grid over `[-2, 2]²`.
    GaussianGrid { rows: u32, cols: u32, noise: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySpec {
    pub distribution: ToyDistribution,
    pub seed: u64,
}

pub const TOY_NAMES: &str = "ring, two-moons, pinwheel, checkerboard, gaussian-grid";

impl ToyDistribution {
    pub fn validate(&self) -> Result<()> {
        let noise = match *self {
            ToyDistribution::Ring { radius, noise } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(KpfError::invalid("ring radius must be positive"));
                }
                noise
            }
            ToyDistribution::TwoMoons { noise } => noise,
            ToyDistribution::Pinwheel { arms, noise } => {
                if arms == 0 {
                    return Err(KpfError::invalid("pinwheel needs at least one arm"));
                }
                noise
            }
            ToyDistribution::Checkerboard { cells } => {
                if cells == 0 {
                    return Err(KpfError::invalid("checkerboard needs at least one cell"));
                }
                0.0
            }
            ToyDistribution::GaussianGrid { rows, cols, noise } => {
                if rows == 0 || cols == 0 {
                    return Err(KpfError::invalid("gaussian grid needs at least one row and column"));
                }
                noise
            }
        };
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(KpfError::invalid(format!("noise must be non-negative, got {noise}")));
        }
        Ok(())
    }
}

impl FromStr for ToyDistribution {
    type Err = KpfError;

    /// `ring[:radius=,noise=]`, `two-moons[:noise=]`,
    /// `pinwheel[:arms=,noise=]`, `checkerboard[:cells=]`,
    /// `gaussian-grid[:rows=,cols=,noise=]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, p) = parse_params(s)?;
        let dist = match name {
            "ring" => {
                reject_unknown(&p, &["radius", "noise"], s)?;
                ToyDistribution::Ring {
                    radius: param(&p, "radius", s)?.unwrap_or(1.0),
                    noise: param(&p, "noise", s)?.unwrap_or(0.05),
                }
            }
            "two-moons" => {
                reject_unknown(&p, &["noise"], s)?;
                ToyDistribution::TwoMoons {
                    noise: param(&p, "noise", s)?.unwrap_or(0.05),
                }
            }
            "pinwheel" => {
                reject_unknown(&p, &["arms", "noise"], s)?;
                ToyDistribution::Pinwheel {
                    arms: param(&p, "arms", s)?.unwrap_or(5),
                    noise: param(&p, "noise", s)?.unwrap_or(0.05),
                }
            }
            "checkerboard" => {
                reject_unknown(&p, &["cells"], s)?;
                ToyDistribution::Checkerboard {
                    cells: param(&p, "cells", s)?.unwrap_or(4),
                }
            }
            "gaussian-grid" => {
                reject_unknown(&p, &["rows", "cols", "noise"], s)?;
                ToyDistribution::GaussianGrid {
                    rows: param(&p, "rows", s)?.unwrap_or(3),
                    cols: param(&p, "cols", s)?.unwrap_or(3),
                    noise: param(&p, "noise", s)?.unwrap_or(0.05),
                }
            }
            other => {
                return Err(KpfError::invalid(format!(
                    "unknown distribution `{other}` (valid: {TOY_NAMES})"
                )))
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl fmt::Display for ToyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ToyDistribution::Ring { radius, noise } => write!(f, "ring:radius={radius:?},noise={noise:?}"),
            ToyDistribution::TwoMoons { noise } => write!(f, "two-moons:noise={noise:?}"),
            ToyDistribution::Pinwheel { arms, noise } => write!(f, "pinwheel:arms={arms},noise={noise:?}"),
            ToyDistribution::Checkerboard { cells } => write!(f, "checkerboard:cells={cells}"),
            ToyDistribution::GaussianGrid { rows, cols, noise } => {
                write!(f, "gaussian-grid:rows={rows},cols={cols},noise={noise:?}")
            }
        }
    }
}

/// Whether `p` lies in an "on" cell (even `i + j`) of the board.
pub fn checkerboard_cell_on(p: &[f64], cells: u32) -> bool {
    let width = 4.0 / cells as f64;
    let cell = |v: f64| (((v + 2.0) / width).floor() as i64).clamp(0, cells as i64 - 1);
    (cell(p[0]) + cell(p[1])) % 2 == 0
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Grid coordinate `k` of `count` evenly spaced over `[-2, 2]`.
fn grid_coord(k: u32, count: u32) -> f64 {
    if count == 1 {
        0.0
    } else {
        -2.0 + 4.0 * k as f64 / (count - 1) as f64
    }
}

/// `n` i.i.d. draws from the toy density.
pub fn generate_toy(spec: &ToySpec, n: usize) -> Result<PointSet> {
    spec.distribution.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut flat = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (x, y) = match spec.distribution {
            ToyDistribution::Ring { radius, noise } => {
                let t = rng.random_range(0.0..2.0 * PI);
                (radius * t.cos() + noise * gauss(&mut rng), radius * t.sin() + noise * gauss(&mut rng))
            }
            ToyDistribution::TwoMoons { noise } => {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if rng.random_bool(0.5) {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                (x + noise * gauss(&mut rng), y + noise * gauss(&mut rng))
            }
            ToyDistribution::Pinwheel { arms, noise } => {
                let arm = rng.random_range(0..arms);
                let r = 1.0 + 0.3 * gauss(&mut rng);
                let t = noise * gauss(&mut rng);
                let angle = 2.0 * PI * arm as f64 / arms as f64 + 0.25 * r.exp();
                let (s, c) = angle.sin_cos();
                (c * r - s * t, s * r + c * t)
            }
            ToyDistribution::Checkerboard { cells } => {
                let on = (cells as u64 * cells as u64).div_ceil(2);
                let k = rng.random_range(0..on);
                // k-th on-cell in row-major order
                let flat_index = {
                    let row = (2 * k) / cells as u64;
                    let col = (2 * k) % cells as u64 + if cells % 2 == 0 { row % 2 } else { 0 };
                    (row, col)
                };
                let width = 4.0 / cells as f64;
                let (i, j) = flat_index;
                (
                    -2.0 + width * (j as f64 + rng.random::<f64>()),
                    -2.0 + width * (i as f64 + rng.random::<f64>()),
                )
            }
            ToyDistribution::GaussianGrid { rows, cols, noise } => {
                let r = rng.random_range(0..rows);
                let c = rng.random_range(0..cols);
                (
                    grid_coord(c, cols) + noise * gauss(&mut rng),
                    grid_coord(r, rows) + noise * gauss(&mut rng),
                )
            }
        };
        flat.push(x);
        flat.push(y);
    }
    Ok(PointSet::from_flat(2, flat))
}
