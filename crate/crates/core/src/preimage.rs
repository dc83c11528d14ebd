//! Preimages: mapping a transferred RKHS element back to input space.

use nalgebra::{DMatrix, DVector};

use crate::error::{KpfError, Result};
use crate::kernels::KernelSpec;
use crate::numerics::exact_pinv;
use crate::points::{dot, norm, PointSet};

/// The γ training points with the largest transfer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub indices: Vec<usize>,
    pub points: PointSet,
    /// Sorted descending.
    pub weights: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Top-γ selection by transfer weight, ties to the smaller index.
pub fn select_neighborhood(x: &PointSet, s: &[f64], gamma: usize) -> Result<Neighborhood> {
    let n = x.len();
    crate::error::check_dim(n, s.len())?;
    if gamma == 0 || gamma > n {
        return Err(KpfError::invalid(format!("gamma must be in 1..={n}, got {gamma}")));
    }
    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
        return Err(KpfError::Numerical(format!("transfer weight {i} is not finite")));
    }
    let by_weight = |a: &usize, b: &usize| s[*b].total_cmp(&s[*a]).then(a.cmp(b));
    let mut order: Vec<usize> = (0..n).collect();
    if gamma < n {
        order.select_nth_unstable_by(gamma - 1, by_weight);
        order.truncate(gamma);
    }
    order.sort_unstable_by(by_weight);
    Ok(Neighborhood {
        points: x.select(&order),
        weights: order.iter().map(|&i| s[i]).collect(),
        indices: order,
    })
}

/// Weights clamped at zero; all-zero falls back to uniform.
fn clamped_weights(nb: &Neighborhood) -> Vec<f64> {
    let w: Vec<f64> = nb.weights.iter().map(|&v| v.max(0.0)).collect();
    if w.iter().sum::<f64>() > 0.0 {
        w
    } else {
        vec![1.0; w.len()]
    }
}

/// Weighted arithmetic mean `X'ᵀs'/‖s'‖₁` of the neighborhood.
pub fn preimage_wfm_euclidean(nb: &Neighborhood) -> Result<Vec<f64>> {
    if nb.is_empty() {
        return Err(KpfError::invalid("empty neighborhood"));
    }
    let w = clamped_weights(nb);
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; nb.points.dim()];
    for (p, wi) in nb.points.iter().zip(&w) {
        let f = wi / total;
        for (o, v) in out.iter_mut().zip(p) {
            *o += f * v;
        }
    }
    Ok(out)
}

/// Step rule for the recursive spherical mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SphereStep {
    /// `t = s'_{i+1} / Σ_{j≤i+1} s'_j`; reduces to the incremental
    /// Fréchet mean for equal weights.
    #[default]
    CumulativeFraction,
    /// The raw weight as the geodesic fraction, for comparison only.
    RawWeight,
}

const ANTIPODAL_TOL: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-8;

/// Moves `m` toward `x` along the great circle by fraction `t` of the
/// angle between them.
pub(crate) fn geodesic_step(m: &mut [f64], x: &[f64], t: f64) -> Result<()> {
    let c = dot(m, x).clamp(-1.0, 1.0);
    let theta = c.acos();
    if std::f64::consts::PI - theta < ANTIPODAL_TOL {
        return Err(KpfError::Antipodal);
    }
    if theta == 0.0 || t == 0.0 {
        return Ok(());
    }
    let mut v: Vec<f64> = x.iter().zip(m.iter()).map(|(xi, mi)| xi - mi * c).collect();
    let vn = norm(&v);
    if vn == 0.0 {
        return Ok(());
    }
    v.iter_mut().for_each(|e| *e /= vn);
    let (s, cs) = (t * theta).sin_cos();
    for (mi, vi) in m.iter_mut().zip(&v) {
        *mi = cs * *mi + s * vi;
    }
    let r = norm(m);
    m.iter_mut().for_each(|e| *e /= r);
    Ok(())
}

/// Recursive weighted Fréchet mean on the unit sphere, processing the
/// neighborhood in its stored (descending weight) order.
pub fn preimage_wfm_sphere(nb: &Neighborhood, step: SphereStep) -> Result<Vec<f64>> {
    if nb.is_empty() {
        return Err(KpfError::invalid("empty neighborhood"));
    }
    for (i, p) in nb.points.iter().enumerate() {
        if (norm(p) - 1.0).abs() > UNIT_TOL {
            return Err(KpfError::Domain(format!(
                "neighborhood point {} is not unit norm (‖x‖ = {})",
                nb.indices.get(i).copied().unwrap_or(i),
                norm(p)
            )));
        }
    }
    let w = clamped_weights(nb);
    let mut m = nb.points.point(0).to_vec();
    let r = norm(&m);
    m.iter_mut().for_each(|e| *e /= r);
    let mut cumulative = w[0];
    for (i, p) in nb.points.iter().enumerate().skip(1) {
        cumulative += w[i];
        let t = match step {
            SphereStep::CumulativeFraction if cumulative > 0.0 => w[i] / cumulative,
            SphereStep::CumulativeFraction => 0.0,
            SphereStep::RawWeight => w[i],
        };
        geodesic_step(&mut m, p, t)?;
    }
    Ok(m)
}

/// Classical MDS reconstruction from squared input-space distances to the
/// neighborhood points: `x̄ + ½(X̃X̃ᵀ)^† X̃(‖x̃_i‖² − δ_i²)` with `X̃` the
/// centred neighborhood.
pub fn mds_from_distances(points: &PointSet, sq_dists: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_dim(points.len(), sq_dists.len())?;
    if points.is_empty() {
        return Err(KpfError::invalid("empty neighborhood"));
    }
    let g = points.len();
    let d = points.dim();
    let cols = points.as_columns();
    let mean: DVector<f64> = cols.column_sum() / g as f64;
    let mut centred = cols.clone();
    for mut c in centred.column_iter_mut() {
        c -= &mean;
    }
    let rhs = DVector::from_fn(g, |i, _| centred.column(i).norm_squared() - sq_dists[i]);
    let gram: DMatrix<f64> = &centred * centred.transpose();
    let y = exact_pinv(&gram).matrix * (&centred * rhs) * 0.5;
    debug_assert_eq!(y.len(), d);
    Ok((mean + y).iter().copied().collect())
}

/// RKHS-distance-preserving preimage.
///
/// `sq_norm` is `⟨Ψ*, Ψ*⟩`. RKHS distances
/// `d_i² = l(x_i,x_i) − 2s_i + ⟨Ψ*,Ψ*⟩` are converted to input-space
/// distances through the RBF profile, so only RBF output kernels are
/// supported.
pub fn preimage_mds(nb: &Neighborhood, output_kernel: &KernelSpec, sq_norm: f64) -> Result<Vec<f64>> {
    let KernelSpec::Rbf { bandwidth } = *output_kernel else {
        return Err(KpfError::invalid(format!(
            "MDS preimage needs an RBF output kernel, got {output_kernel}"
        )));
    };
    let two_sigma_sq = 2.0 * bandwidth * bandwidth;
    let mut sq = Vec::with_capacity(nb.len());
    for (i, &s) in nb.weights.iter().enumerate() {
        let d2 = 1.0 - 2.0 * s + sq_norm;
        if d2 < -1e-8 {
            return Err(KpfError::Numerical(format!(
                "negative squared RKHS distance {d2:e} to neighbor {}",
                nb.indices[i]
            )));
        }
        // ‖l(x,·) − l(y,·)‖² = 2 − 2exp(−δ²/2σ²)
        let ratio = (d2.max(0.0) / 2.0).min(1.0 - f64::EPSILON);
        sq.push(-two_sigma_sq * (-ratio).ln_1p());
    }
    mds_from_distances(&nb.points, &sq)
}
