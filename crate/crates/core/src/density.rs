//! Density reconstruction from the transferred embedding with the kernel
//! conditional density operator.
//!
//! `p̂(x) = Σ_i β_i l(y_i, x)` estimates the ratio `p(x)/ρ(x)` of the
//! transferred density to the density `ρ` the reference points were drawn
//! from. Multiply by `ρ(x)` (see [`evaluate_density_with_reference`]) for a
//! density with respect to Lebesgue measure.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KpfError, Result};
use crate::kernels::{self_gram, KernelSpec};
use crate::numerics::cholesky_shifted;
use crate::operator::KpfModel;
use crate::points::PointSet;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub reference: PointSet,
    pub beta: DVector<f64>,
    pub kernel: KernelSpec,
    pub alpha: f64,
    pub alpha_prime: f64,
}

/// How to solve with the `m×m` reference Gram matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DensitySolver {
    /// Dense for `m ≤ 2000`, low rank above.
    #[default]
    Auto,
    Dense,
    /// Pivoted-Cholesky factor plus Woodbury; falls back to dense if the
    /// numerical rank is too high.
    LowRank,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityOptions {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub solver: DensitySolver,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            alpha_prime: 1e-3,
            solver: DensitySolver::Auto,
        }
    }
}

const DENSE_LIMIT: usize = 2000;

/// Coefficients `w̄ = (K + nαI)^{-1} K 1/n` of the transferred prior mean
/// embedding over the training features.
fn mean_coefficients(model: &KpfModel, alpha: f64) -> Result<DVector<f64>> {
    let n = model.n();
    let k = self_gram(model.input_kernel(), model.prior_draws())?.into_inner();
    let rhs = k.column_sum() / n as f64;
    let chol = cholesky_shifted(&k, n as f64 * alpha).ok_or_else(|| KpfError::Singular {
        what: "prior kernel".into(),
        hint: format!("K + nαI is not positive definite at α = {alpha}; increase alpha"),
    })?;
    Ok(chol.solve(&rhs))
}

/// `μ_j = Σ_i l(y_j, x_i) w̄_i`, streamed so the `m×n` cross Gram is never
/// stored.
fn reference_mean(kernel: &KernelSpec, reference: &PointSet, x: &PointSet, w: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        reference.len(),
        reference.iter().map(|y| {
            x.iter()
                .zip(w.iter())
                .map(|(xi, wi)| wi * kernel.eval_unchecked(y, xi))
                .sum::<f64>()
        }),
    )
}

/// Greedy pivoted Cholesky `A ≈ G Gᵀ`, stopping once the trace of the
/// residual falls to `tol` or the rank reaches `max_rank`. Returns `None`
/// when the cap is hit first.
fn pivoted_cholesky(kernel: &KernelSpec, pts: &PointSet, tol: f64, max_rank: usize) -> Option<DMatrix<f64>> {
    let m = pts.len();
    let mut diag: Vec<f64> = pts.iter().map(|p| kernel.eval_unchecked(p, p)).collect();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    loop {
        let residual: f64 = diag.iter().sum();
        if residual <= tol {
            break;
        }
        if cols.len() >= max_rank {
            return None;
        }
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if dp <= 0.0 {
            break;
        }
        let root = dp.sqrt();
        let pivot = pts.point(p);
        let mut col: Vec<f64> = pts.iter().map(|q| kernel.eval_unchecked(q, pivot)).collect();
        for prev in &cols {
            let f = prev[p];
            for (c, v) in col.iter_mut().zip(prev) {
                *c -= f * v;
            }
        }
        for (i, c) in col.iter_mut().enumerate() {
            *c /= root;
            diag[i] = (diag[i] - *c * *c).max(0.0);
        }
        diag[p] = 0.0;
        cols.push(col);
    }
    let r = cols.len();
    Some(DMatrix::from_fn(m, r, |i, j| cols[j][i]))
}

/// `m·(L_y + mα'I)^{-2} μ` by two Cholesky solves.
fn solve_dense(kernel: &KernelSpec, reference: &PointSet, shift: f64, mu: &DVector<f64>) -> Result<DVector<f64>> {
    let ly = self_gram(kernel, reference)?.into_inner();
    let chol = cholesky_shifted(&ly, shift).ok_or_else(|| KpfError::Singular {
        what: "reference kernel".into(),
        hint: "L_y + mα'I is not positive definite; increase alpha_prime".into(),
    })?;
    let once = chol.solve(mu);
    Ok(chol.solve(&once) * reference.len() as f64)
}

/// Same as [`solve_dense`] with `L_y ≈ GGᵀ`:
/// `(GGᵀ + cI)^{-1} b = (b − G(cI + GᵀG)^{-1}Gᵀb)/c`.
fn solve_low_rank(g: &DMatrix<f64>, shift: f64, mu: &DVector<f64>) -> Result<DVector<f64>> {
    let r = g.ncols();
    let mut inner = g.transpose() * g;
    for i in 0..r {
        inner[(i, i)] += shift;
    }
    let chol = nalgebra::Cholesky::new(inner).ok_or_else(|| {
        KpfError::Numerical("low-rank reference system is not positive definite".into())
    })?;
    let apply = |b: &DVector<f64>| -> DVector<f64> {
        let t = chol.solve(&(g.transpose() * b));
        (b - g * t) / shift
    };
    let once = apply(mu);
    Ok(apply(&once) * g.nrows() as f64)
}

/// Builds the density estimate with default solver selection.
pub fn estimate_density(
    model: &KpfModel,
    reference: &PointSet,
    alpha: f64,
    alpha_prime: f64,
) -> Result<DensityEstimate> {
    estimate_density_with(
        model,
        reference,
        &DensityOptions {
            alpha,
            alpha_prime,
            solver: DensitySolver::Auto,
        },
    )
}

/// `β = m·(L_y + mα'I)^{-2} L_yx w̄` with `w̄ = (K + nαI)^{-1}K1/n`.
pub fn estimate_density_with(
    model: &KpfModel,
    reference: &PointSet,
    opts: &DensityOptions,
) -> Result<DensityEstimate> {
    let m = reference.len();
    if m < 2 {
        return Err(KpfError::invalid(format!("need at least 2 reference points, got {m}")));
    }
    check_dim(model.data().dim(), reference.dim())?;
    for (name, v) in [("alpha", opts.alpha), ("alpha_prime", opts.alpha_prime)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(KpfError::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let kernel = *model.output_kernel();
    if kernel.is_angular() {
        if let Some(i) = reference.iter().position(|p| crate::points::norm(p) == 0.0) {
            return Err(KpfError::Domain(format!("{kernel} is undefined at reference point {i}")));
        }
    }
    let w = mean_coefficients(model, opts.alpha)?;
    let mu = reference_mean(&kernel, reference, model.data(), &w);
    let shift = m as f64 * opts.alpha_prime;

    let use_dense = match opts.solver {
        DensitySolver::Dense => true,
        DensitySolver::Auto => m <= DENSE_LIMIT,
        DensitySolver::LowRank => false,
    };
    let beta = if use_dense {
        solve_dense(&kernel, reference, shift, &mu)?
    } else {
        match pivoted_cholesky(&kernel, reference, 1e-12 * shift, (m / 2).clamp(1, DENSE_LIMIT)) {
            Some(g) => {
                log::debug!("density: low-rank reference factor of rank {}", g.ncols());
                solve_low_rank(&g, shift, &mu)?
            }
            None => {
                log::info!("density: reference Gram has high numerical rank; using dense solve");
                solve_dense(&kernel, reference, shift, &mu)?
            }
        }
    };
    Ok(DensityEstimate {
        reference: reference.clone(),
        beta,
        kernel,
        alpha: opts.alpha,
        alpha_prime: opts.alpha_prime,
    })
}

/// `p̂(x) = Σ_i β_i l(y_i, x)` at each query.
pub fn evaluate_density(est: &DensityEstimate, queries: &PointSet) -> Result<Vec<f64>> {
    check_dim(est.reference.dim(), queries.dim())?;
    queries
        .iter()
        .map(|q| {
            if est.kernel.is_angular() && crate::points::norm(q) == 0.0 {
                return Err(KpfError::Domain(format!("{} is undefined at the zero vector", est.kernel)));
            }
            Ok(est
                .reference
                .iter()
                .zip(est.beta.iter())
                .map(|(y, b)| b * est.kernel.eval_unchecked(y, q))
                .sum())
        })
        .collect()
}

/// [`evaluate_density`] multiplied by the reference density `ρ(x)`.
pub fn evaluate_density_with_reference(
    est: &DensityEstimate,
    queries: &PointSet,
    reference_density: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>> {
    let raw = evaluate_density(est, queries)?;
    Ok(raw
        .into_iter()
        .zip(queries.iter())
        .map(|(v, q)| v * reference_density(q))
        .collect())
}
