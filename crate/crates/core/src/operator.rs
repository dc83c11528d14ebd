//! The empirical kPF operator: fitting and transfer weights.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KpfError, Result};
use crate::kernels::{gram, kernel_column, param, parse_params, reject_unknown, self_gram, KernelSpec};
use crate::numerics::{
    exact_pinv, hyperpower_pinv, regularized_inverse, HyperpowerOptions, InverseMethod, InverseResult,
};
use crate::points::PointSet;
use crate::sampling::sample_prior;

/// Distribution of the latent prior draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorDistribution {
    /// Uniform on the unit sphere `S^{dim-1}`.
    UnitSphere { dim: usize },
    StandardGaussian { dim: usize },
}

impl PriorDistribution {
    pub fn dim(&self) -> usize {
        match *self {
            PriorDistribution::UnitSphere { dim } | PriorDistribution::StandardGaussian { dim } => dim,
        }
    }

    /// Parses `sphere[:dim=<n>]` or `gaussian[:dim=<n>]`, using
    /// `default_dim` when no dimension is given.
    pub fn parse(s: &str, default_dim: usize) -> Result<Self> {
        let (name, params) = parse_params(s)?;
        reject_unknown(&params, &["dim"], s)?;
        let dim = param(&params, "dim", s)?.unwrap_or(default_dim);
        if dim == 0 {
            return Err(KpfError::invalid("prior dimension must be at least 1"));
        }
        match name {
            "sphere" => Ok(PriorDistribution::UnitSphere { dim }),
            "gaussian" => Ok(PriorDistribution::StandardGaussian { dim }),
            other => Err(KpfError::invalid(format!(
                "unknown prior `{other}` (expected sphere or gaussian)"
            ))),
        }
    }
}

impl fmt::Display for PriorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PriorDistribution::UnitSphere { dim } => write!(f, "sphere:dim={dim}"),
            PriorDistribution::StandardGaussian { dim } => write!(f, "gaussian:dim={dim}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriorSpec {
    pub distribution: PriorDistribution,
    pub seed: u64,
}

impl PriorSpec {
    pub fn unit_sphere(dim: usize, seed: u64) -> Self {
        Self {
            distribution: PriorDistribution::UnitSphere { dim },
            seed,
        }
    }

    pub fn gaussian(dim: usize, seed: u64) -> Self {
        Self {
            distribution: PriorDistribution::StandardGaussian { dim },
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.distribution.dim()
    }
}

/// Which inverse of the prior Gram matrix to cache.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseStrategy {
    /// `(K + λnI)^{-1}` for λ > 0; for λ = 0 a Cholesky inverse of `K`,
    /// falling back to the SVD pseudoinverse if allowed.
    Auto,
    /// SVD pseudoinverse of `K + λnI`.
    ExactPinv,
    /// Hyperpower pseudoinverse of `K + λnI`.
    Hyperpower(HyperpowerOptions),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// `None` selects `1e-3·trace(K)/n`.
    pub lambda: Option<f64>,
    pub inverse: InverseStrategy,
    /// With λ = 0 and a singular `K`, use the pseudoinverse instead of
    /// failing.
    pub pinv_fallback: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            inverse: InverseStrategy::Auto,
            pinv_fallback: true,
        }
    }
}

impl FitOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::default()
        }
    }
}

/// A fitted kPF operator.
///
/// Immutable after fitting; the cached `L` and `K_inv` are shared by all
/// queries.
#[derive(Clone, Debug)]
pub struct KpfModel {
    pub(crate) x: PointSet,
    pub(crate) z: PointSet,
    pub(crate) input_kernel: KernelSpec,
    pub(crate) output_kernel: KernelSpec,
    pub(crate) lambda: f64,
    pub(crate) l: DMatrix<f64>,
    pub(crate) k_inv: InverseResult,
    pub(crate) prior: PriorSpec,
    pub(crate) inverse: InverseStrategy,
    pub(crate) on_sphere: bool,
}

/// Transfer weights `s = L·K_inv·κ` for one prior sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferWeights {
    pub s: DVector<f64>,
    /// Coefficients `w = K_inv·κ` of the transferred embedding over the
    /// training features, so that `Ψ* = Σ w_i l(x_i, ·)`.
    pub coeffs: DVector<f64>,
    pub source: Vec<f64>,
}

impl TransferWeights {
    /// `⟨Ψ*, Ψ*⟩ = wᵀLw = w·s`.
    pub fn rkhs_sq_norm(&self) -> f64 {
        self.coeffs.dot(&self.s)
    }
}

/// Default regularization `1e-3·trace(K)/n`.
pub fn default_lambda(k: &DMatrix<f64>) -> f64 {
    1e-3 * k.trace() / k.nrows() as f64
}

fn singular(what: &str, hint: impl Into<String>) -> KpfError {
    KpfError::Singular {
        what: what.into(),
        hint: hint.into(),
    }
}

pub(crate) fn invert_prior_gram(
    k: &DMatrix<f64>,
    lambda: f64,
    strategy: InverseStrategy,
    pinv_fallback: bool,
) -> Result<InverseResult> {
    let n = k.nrows();
    let shifted = || {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += lambda * n as f64;
        }
        a
    };
    match strategy {
        InverseStrategy::Auto => match regularized_inverse(k, lambda, n) {
            Ok(r) => Ok(r),
            Err(KpfError::Singular { .. }) if lambda == 0.0 && pinv_fallback => {
                log::warn!("prior Gram matrix is singular; using the SVD pseudoinverse");
                Ok(exact_pinv(k))
            }
            Err(KpfError::Singular { .. }) if lambda == 0.0 => Err(singular(
                "prior kernel",
                "K is not positive definite at lambda = 0; increase lambda",
            )),
            Err(e) => Err(e),
        },
        InverseStrategy::ExactPinv => Ok(exact_pinv(&shifted())),
        InverseStrategy::Hyperpower(opts) => hyperpower_pinv(&shifted(), opts),
    }
}

/// Fits the operator, drawing `n = |X|` prior samples from `prior`.
pub fn fit(
    x: &PointSet,
    prior: &PriorSpec,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    opts: &FitOptions,
) -> Result<KpfModel> {
    if x.len() < 2 {
        return Err(KpfError::invalid(format!(
            "fitting needs at least 2 data points, got {}",
            x.len()
        )));
    }
    if prior.dim() == 0 {
        return Err(KpfError::invalid("prior dimension must be at least 1"));
    }
    let z = sample_prior(&prior.distribution, x.len(), prior.seed);
    fit_with_draws(x, z, prior, input_kernel, output_kernel, opts)
}

/// Fits the operator from explicitly supplied prior draws `Z`.
pub fn fit_with_draws(
    x: &PointSet,
    z: PointSet,
    prior: &PriorSpec,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    opts: &FitOptions,
) -> Result<KpfModel> {
    input_kernel.validate()?;
    output_kernel.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(KpfError::invalid(format!(
            "fitting needs at least 2 data points, got {n}"
        )));
    }
    check_dim(n, z.len())?;
    check_dim(prior.dim(), z.dim())?;
    if let Some(lambda) = opts.lambda {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(KpfError::invalid(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
    }
    if input_kernel.is_angular() {
        if let Some((i, j)) = z.first_duplicate() {
            return Err(singular(
                "prior kernel",
                format!("prior draws {i} and {j} coincide; reseed or use a higher prior dimension"),
            ));
        }
    }
    if opts.lambda == Some(0.0) && !opts.pinv_fallback {
        if let Some((i, j)) = x.first_duplicate() {
            return Err(singular(
                "output kernel",
                format!("data rows {i} and {j} are duplicates; increase lambda or deduplicate"),
            ));
        }
    }

    let k = self_gram(&input_kernel, &z)?.into_inner();
    let lambda = opts.lambda.unwrap_or_else(|| default_lambda(&k));
    let k_inv = invert_prior_gram(&k, lambda, opts.inverse, opts.pinv_fallback)?;
    drop(k);
    let l = self_gram(&output_kernel, x)?.into_inner();
    log::debug!(
        "fitted kpf: n={n} d_x={} d_z={} lambda={lambda:e} input={input_kernel} output={output_kernel}",
        x.dim(),
        z.dim()
    );
    let on_sphere = x.iter().all(|p| (crate::points::norm(p) - 1.0).abs() <= 1e-8);
    Ok(KpfModel {
        x: x.clone(),
        z,
        input_kernel,
        output_kernel,
        lambda,
        l,
        k_inv,
        prior: *prior,
        inverse: opts.inverse,
        on_sphere,
    })
}

impl KpfModel {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn data(&self) -> &PointSet {
        &self.x
    }

    pub fn prior_draws(&self) -> &PointSet {
        &self.z
    }

    pub fn input_kernel(&self) -> &KernelSpec {
        &self.input_kernel
    }

    pub fn output_kernel(&self) -> &KernelSpec {
        &self.output_kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn inverse_strategy(&self) -> InverseStrategy {
        self.inverse
    }

    /// Cached output Gram matrix `L`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn k_inv(&self) -> &InverseResult {
        &self.k_inv
    }

    pub fn inverse_method(&self) -> InverseMethod {
        self.k_inv.method
    }

    /// Whether every training point is unit norm.
    pub fn data_on_sphere(&self) -> bool {
        self.on_sphere
    }

    /// Transfer weights for one prior sample.
    pub fn transfer_weights(&self, z_star: &[f64]) -> Result<TransferWeights> {
        check_dim(self.z.dim(), z_star.len())?;
        let kappa = DVector::from_vec(kernel_column(&self.input_kernel, &self.z, z_star)?);
        let coeffs = &self.k_inv.matrix * kappa;
        let s = &self.l * &coeffs;
        Ok(TransferWeights {
            s,
            coeffs,
            source: z_star.to_vec(),
        })
    }

    /// Transfer weights for many prior samples at once: columns of
    /// `(S, W)` with `S = L·W` and `W = K_inv·κ`.
    pub fn transfer_weights_batch(&self, zs: &PointSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim(self.z.dim(), zs.dim())?;
        let kappa = gram(&self.input_kernel, &self.z, zs)?.into_inner();
        let w = &self.k_inv.matrix * kappa;
        let s = &self.l * &w;
        Ok((s, w))
    }
}

/// Free-function form of [`KpfModel::transfer_weights`].
pub fn transfer_weights(model: &KpfModel, z_star: &[f64]) -> Result<TransferWeights> {
    model.transfer_weights(z_star)
}
