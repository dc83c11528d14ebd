//! Kernel functions and Gram matrices.
//!
//! Four families are provided, all usable as either the input kernel `k`
//! (on prior space) or the output kernel `l` (on data space):
//!
//! | variant | formula |
//! |---------|---------|
//! | `Rbf { bandwidth: σ }` | `exp(-‖x-y‖² / (2σ²))` |
//! | `ArcCos { depth, degree }` | arc-cosine kernel, layered |
//! | `Ntk { depth }` | infinite-width fully-connected ReLU NTK |
//! | `Polynomial { degree, offset }` | `(x·y + offset)^degree` |
//!
//! The dot-product kernels (arc-cosine and NTK) are undefined at the zero
//! vector and are rotation invariant; they are intended for inputs on the
//! unit hypersphere.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{check_dim, KpfError, Result};
use crate::points::{dot, norm, sq_dist, PointSet};

/// Description of a positive-semidefinite kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Rbf { bandwidth: f64 },
    ArcCos { depth: u32, degree: u32 },
    /// `width` of the finite network is irrelevant to the exact kernel and
    /// is not stored.
    Ntk { depth: u32 },
    Polynomial { degree: u32, offset: f64 },
}

/// Highest arc-cosine degree with a closed-form angular function here.
pub const MAX_ARCCOS_DEGREE: u32 = 3;

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn ntk(depth: u32) -> Result<Self> {
        let k = KernelSpec::Ntk { depth };
        k.validate()?;
        Ok(k)
    }

    pub fn arccos(depth: u32, degree: u32) -> Result<Self> {
        let k = KernelSpec::ArcCos { depth, degree };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let k = KernelSpec::Polynomial { degree, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => Err(
                KpfError::invalid(format!("rbf bandwidth must be positive, got {bandwidth}")),
            ),
            KernelSpec::Ntk { depth: 0 } | KernelSpec::ArcCos { depth: 0, .. } => {
                Err(KpfError::invalid("kernel depth must be at least 1"))
            }
            KernelSpec::ArcCos { degree, .. } if degree > MAX_ARCCOS_DEGREE => {
                Err(KpfError::invalid(format!(
                    "arc-cosine degree {degree} unsupported (max {MAX_ARCCOS_DEGREE})"
                )))
            }
            KernelSpec::Polynomial { degree: 0, .. } => {
                Err(KpfError::invalid("polynomial degree must be at least 1"))
            }
            KernelSpec::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(KpfError::invalid("polynomial offset must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Dot-product kernels that are undefined at the origin.
    pub fn is_angular(&self) -> bool {
        matches!(self, KernelSpec::ArcCos { .. } | KernelSpec::Ntk { .. })
    }

    /// Evaluates the kernel without argument checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                (-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
            KernelSpec::Ntk { depth } => ntk(dot(x, y), dot(x, x), dot(y, y), depth),
            KernelSpec::ArcCos { depth, degree } => {
                arccos(dot(x, y), dot(x, x), dot(y, y), depth, degree)
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Rbf { bandwidth } => write!(f, "rbf:sigma={bandwidth:?}"),
            KernelSpec::Ntk { depth } => write!(f, "ntk:depth={depth}"),
            KernelSpec::ArcCos { depth, degree } => {
                write!(f, "arccos:depth={depth},degree={degree}")
            }
            KernelSpec::Polynomial { degree, offset } => {
                write!(f, "poly:degree={degree},offset={offset:?}")
            }
        }
    }
}

/// Splits `name:key=value,key=value` into its name and parameter pairs.
pub(crate) fn parse_params(s: &str) -> Result<(&str, Vec<(&str, &str)>)> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut params = Vec::new();
    for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| KpfError::invalid(format!("expected key=value, got `{part}`")))?;
        params.push((k.trim(), v.trim()));
    }
    Ok((name.trim(), params))
}

pub(crate) fn param<T: FromStr>(params: &[(&str, &str)], key: &str, spec: &str) -> Result<Option<T>> {
    params
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| {
            v.parse::<T>()
                .map_err(|_| KpfError::invalid(format!("bad value `{v}` for `{key}` in `{spec}`")))
        })
        .transpose()
}

pub(crate) fn reject_unknown(params: &[(&str, &str)], allowed: &[&str], spec: &str) -> Result<()> {
    match params.iter().find(|(k, _)| !allowed.contains(k)) {
        Some((k, _)) => Err(KpfError::invalid(format!(
            "unknown parameter `{k}` in `{spec}` (allowed: {})",
            allowed.join(", ")
        ))),
        None => Ok(()),
    }
}

impl FromStr for KernelSpec {
    type Err = KpfError;

    /// Parses `rbf:sigma=<f>`, `ntk:depth=<n>`, `arccos:depth=<n>,degree=<n>`
    /// or `poly:degree=<n>[,offset=<f>]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = parse_params(s)?;
        let required = |key: &str| -> Result<u32> {
            param(&params, key, s)?
                .ok_or_else(|| KpfError::invalid(format!("`{s}` is missing `{key}`")))
        };
        let spec = match name {
            "rbf" => {
                reject_unknown(&params, &["sigma"], s)?;
                let bandwidth = param::<f64>(&params, "sigma", s)?
                    .ok_or_else(|| KpfError::invalid(format!("`{s}` is missing `sigma`")))?;
                KernelSpec::Rbf { bandwidth }
            }
            "ntk" => {
                reject_unknown(&params, &["depth"], s)?;
                KernelSpec::Ntk {
                    depth: required("depth")?,
                }
            }
            "arccos" => {
                reject_unknown(&params, &["depth", "degree"], s)?;
                KernelSpec::ArcCos {
                    depth: param(&params, "depth", s)?.unwrap_or(1),
                    degree: param(&params, "degree", s)?.unwrap_or(1),
                }
            }
            "poly" => {
                reject_unknown(&params, &["degree", "offset"], s)?;
                KernelSpec::Polynomial {
                    degree: required("degree")?,
                    offset: param(&params, "offset", s)?.unwrap_or(1.0),
                }
            }
            other => {
                return Err(KpfError::invalid(format!(
                    "unknown kernel `{other}` (expected rbf, ntk, arccos or poly)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

// κ₁ and κ₀: the ReLU and step-function arc-cosine maps at correlation ρ,
// normalized so that κ₁(1) = κ₀(1) = 1.
#[inline]
fn relu_map(rho: f64) -> f64 {
    ((1.0 - rho * rho).max(0.0).sqrt() + (PI - rho.acos()) * rho) / PI
}

#[inline]
fn step_map(rho: f64) -> f64 {
    (PI - rho.acos()) / PI
}

/// Exact NTK of a depth-`depth` ReLU network from the three input inner
/// products. Σ(x,x) is invariant across layers because κ₁(1) = 1.
fn ntk(xy: f64, xx: f64, yy: f64, depth: u32) -> f64 {
    let scale = (xx * yy).sqrt();
    let mut sigma = xy;
    let mut theta = xy;
    for _ in 0..depth {
        let rho = (sigma / scale).clamp(-1.0, 1.0);
        sigma = scale * relu_map(rho);
        theta = theta * step_map(rho) + sigma;
    }
    theta
}

/// Angular part `J_n(θ)` of the arc-cosine kernel of degree `n`.
fn arccos_angular(degree: u32, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let rest = PI - theta;
    match degree {
        0 => rest,
        1 => s + rest * c,
        2 => 3.0 * s * c + rest * (1.0 + 2.0 * c * c),
        3 => 15.0 * s - 11.0 * s * s * s + rest * (9.0 * c + 6.0 * c * c * c),
        _ => unreachable!("degree validated"),
    }
}

fn arccos(xy: f64, xx: f64, yy: f64, depth: u32, degree: u32) -> f64 {
    let (mut kxy, mut kxx, mut kyy) = (xy, xx, yy);
    // J_n(0) / π = (2n-1)!!
    let diag_gain = arccos_angular(degree, 0.0) / PI;
    let n = degree as i32;
    for _ in 0..depth {
        let scale = (kxx * kyy).sqrt();
        let theta = (kxy / scale).clamp(-1.0, 1.0).acos();
        kxy = scale.powi(n) * arccos_angular(degree, theta) / PI;
        kxx = kxx.powi(n) * diag_gain;
        kyy = kyy.powi(n) * diag_gain;
    }
    kxy
}

fn check_angular_input(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if spec.is_angular() && norm(x) == 0.0 {
        return Err(KpfError::Domain(format!(
            "{spec} is undefined at the zero vector"
        )));
    }
    Ok(())
}

/// Evaluates `k(x, y)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_angular_input(spec, x)?;
    check_angular_input(spec, y)?;
    Ok(spec.eval_unchecked(x, y))
}

/// A kernel matrix `entries[i][j] = k(a_i, b_j)` with its kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub spec: KernelSpec,
    /// Whether the matrix was built from one point set against itself.
    pub is_self_gram: bool,
}

impl GramMatrix {
    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }
}

fn check_points(spec: &KernelSpec, set: &PointSet) -> Result<()> {
    if spec.is_angular() {
        for (i, p) in set.iter().enumerate() {
            if norm(p) == 0.0 {
                return Err(KpfError::Domain(format!(
                    "{spec} is undefined at the zero vector (point {i})"
                )));
            }
        }
    }
    Ok(())
}

/// Cross Gram matrix between two point sets.
pub fn gram(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<GramMatrix> {
    spec.validate()?;
    check_dim(a.dim(), b.dim())?;
    check_points(spec, a)?;
    check_points(spec, b)?;
    let entries = DMatrix::from_fn(a.len(), b.len(), |i, j| {
        spec.eval_unchecked(a.point(i), b.point(j))
    });
    Ok(GramMatrix {
        entries,
        spec: *spec,
        is_self_gram: false,
    })
}

/// Self Gram matrix of one point set; exactly symmetric by construction.
pub fn self_gram(spec: &KernelSpec, a: &PointSet) -> Result<GramMatrix> {
    spec.validate()?;
    check_points(spec, a)?;
    let n = a.len();
    let mut entries = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = spec.eval_unchecked(a.point(i), a.point(j));
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        spec: *spec,
        is_self_gram: true,
    })
}

/// Vector `[k(a_1, y), ..., k(a_n, y)]`.
pub fn kernel_column(spec: &KernelSpec, a: &PointSet, y: &[f64]) -> Result<Vec<f64>> {
    check_dim(a.dim(), y.len())?;
    check_angular_input(spec, y)?;
    Ok(a.iter().map(|p| spec.eval_unchecked(p, y)).collect())
}

/// Median of the pairwise Euclidean distances over all `i < j`.
pub fn median_heuristic_bandwidth(a: &PointSet) -> Result<f64> {
    if a.len() < 2 {
        return Err(KpfError::invalid("median heuristic needs at least two points"));
    }
    let n = a.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(a.point(i), a.point(j)).sqrt());
        }
    }
    let m = dists.len();
    let upper = m / 2;
    let (_, hi, _) = dists.select_nth_unstable_by(upper, f64::total_cmp);
    let hi = *hi;
    let median = if m % 2 == 1 {
        hi
    } else {
        let lo = dists[..upper]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median <= 0.0 {
        return Err(KpfError::invalid(
            "median pairwise distance is zero (points are identical)",
        ));
    }
    Ok(median)
}

/// Bandwidth convenience for latent codes of dimension `latent_dim`:
/// `√(2·latent_dim) / 8`.
pub fn latent_bandwidth(latent_dim: usize) -> f64 {
    (2.0 * latent_dim as f64).sqrt() / 8.0
}
