//! Nyström-approximated kPF operator.
//!
//! With `v` landmarks the prior Gram is approximated by `K_Φ W_Φ^† K_Φᵀ`
//! and the output Gram by `L_Ψ W_Ψ^† L_Ψᵀ`. The regularized inverse is
//! applied through a Woodbury identity so only `n×v` and `v×v` blocks are
//! ever stored.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, KpfError, Result};
use crate::kernels::{gram, kernel_column, self_gram, KernelSpec};
use crate::operator::{PriorSpec, TransferWeights};
use crate::points::PointSet;
use crate::sampling::{sample_prior, TransferOperator};

/// Relative eigenvalue cutoff when factoring landmark Gram blocks.
const EIG_RTOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct NystromModel {
    x: PointSet,
    z: PointSet,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    lambda: f64,
    prior: PriorSpec,
    landmarks: Vec<usize>,
    l_cross: DMatrix<f64>,
    w_out: DMatrix<f64>,
    k_cross: DMatrix<f64>,
    w_in: DMatrix<f64>,
    /// `F` with `F Fᵀ = L_Ψ W_Ψ^† L_Ψᵀ`.
    out_factor: DMatrix<f64>,
    /// Left singular vectors of `G`, `G Gᵀ = K_Φ W_Φ^† K_Φᵀ`.
    in_basis: DMatrix<f64>,
    /// `σ²/(σ² + λn)` per singular value of `G`.
    in_filter: DVector<f64>,
    on_sphere: bool,
}

/// `B Q Λ^{-1/2}` over the eigenpairs of `W` above the cutoff, so that the
/// result times its transpose is `B W^† Bᵀ`.
fn half_inverse_factor(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w.clone());
    let max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > EIG_RTOL * max && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut scaled = DMatrix::zeros(w.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let f = 1.0 / eig.eigenvalues[i].sqrt();
        scaled.set_column(c, &(eig.eigenvectors.column(i) * f));
    }
    b * scaled
}

/// Fits a Nyström operator with `v` landmarks chosen uniformly without
/// replacement.
pub fn fit_nystrom(
    x: &PointSet,
    prior: &PriorSpec,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    lambda: f64,
    v: usize,
) -> Result<NystromModel> {
    let z = sample_prior(&prior.distribution, x.len(), prior.seed);
    fit_nystrom_with_draws(x, z, prior, input_kernel, output_kernel, lambda, v)
}

pub fn fit_nystrom_with_draws(
    x: &PointSet,
    z: PointSet,
    prior: &PriorSpec,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    lambda: f64,
    v: usize,
) -> Result<NystromModel> {
    input_kernel.validate()?;
    output_kernel.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(KpfError::invalid(format!("fitting needs at least 2 data points, got {n}")));
    }
    check_dim(n, z.len())?;
    check_dim(prior.dim(), z.dim())?;
    if v == 0 || v > n {
        return Err(KpfError::invalid(format!("landmark count must be in 1..={n}, got {v}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(KpfError::invalid(format!(
            "Nyström fitting needs lambda > 0, got {lambda}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(prior.seed);
    rng.set_stream(u64::MAX);
    let mut landmarks = index::sample(&mut rng, n, v).into_vec();
    landmarks.sort_unstable();

    let xl = x.select(&landmarks);
    let zl = z.select(&landmarks);
    let l_cross = gram(&output_kernel, x, &xl)?.into_inner();
    let w_out = self_gram(&output_kernel, &xl)?.into_inner();
    let k_cross = gram(&input_kernel, &z, &zl)?.into_inner();
    let w_in = self_gram(&input_kernel, &zl)?.into_inner();

    let out_factor = half_inverse_factor(&w_out, &l_cross);
    let g = half_inverse_factor(&w_in, &k_cross);
    let lam_n = lambda * n as f64;
    let (in_basis, in_filter) = if g.ncols() == 0 {
        (DMatrix::zeros(n, 0), DVector::zeros(0))
    } else {
        let svd = g.svd(true, false);
        let u = svd.u.expect("u requested");
        let f = svd.singular_values.map(|s| s * s / (s * s + lam_n));
        (u, f)
    };
    log::debug!(
        "fitted nystrom kpf: n={n} v={v} rank_out={} rank_in={}",
        out_factor.ncols(),
        in_filter.len()
    );
    let on_sphere = x.iter().all(|p| (crate::points::norm(p) - 1.0).abs() <= 1e-8);
    Ok(NystromModel {
        x: x.clone(),
        z,
        input_kernel,
        output_kernel,
        lambda,
        prior: *prior,
        landmarks,
        l_cross,
        w_out,
        k_cross,
        w_in,
        out_factor,
        in_basis,
        in_filter,
        on_sphere,
    })
}

impl NystromModel {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
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

    /// `(L_Ψ★, W_Ψ★, K_Φ★, W_Φ★)`.
    pub fn blocks(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.l_cross, &self.w_out, &self.k_cross, &self.w_in)
    }

    /// Applies the approximate operator to the columns of `kappa`.
    fn apply(&self, kappa: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let lam_n = self.lambda * self.n() as f64;
        // (G Gᵀ + λnI)^{-1} = (I − U diag(f) Uᵀ) / λn
        let mut proj = self.in_basis.transpose() * kappa;
        for (mut row, f) in proj.row_iter_mut().zip(self.in_filter.iter()) {
            row *= *f;
        }
        let u = (kappa - &self.in_basis * proj) / lam_n;
        let s = &self.out_factor * (self.out_factor.transpose() * &u);
        (s, u)
    }

    pub fn transfer_weights(&self, z_star: &[f64]) -> Result<TransferWeights> {
        check_dim(self.z.dim(), z_star.len())?;
        let kappa = DMatrix::from_vec(self.n(), 1, kernel_column(&self.input_kernel, &self.z, z_star)?);
        let (s, u) = self.apply(&kappa);
        Ok(TransferWeights {
            s: s.column(0).into_owned(),
            coeffs: u.column(0).into_owned(),
            source: z_star.to_vec(),
        })
    }
}

/// Free-function form of [`NystromModel::transfer_weights`].
pub fn nystrom_transfer_weights(model: &NystromModel, z_star: &[f64]) -> Result<TransferWeights> {
    model.transfer_weights(z_star)
}

impl TransferOperator for NystromModel {
    fn training_points(&self) -> &PointSet {
        &self.x
    }
    fn prior(&self) -> &PriorSpec {
        &self.prior
    }
    fn output_kernel(&self) -> &KernelSpec {
        &self.output_kernel
    }
    fn data_on_sphere(&self) -> bool {
        self.on_sphere
    }
    fn transfer_batch(&self, zs: &PointSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim(self.z.dim(), zs.dim())?;
        let kappa = gram(&self.input_kernel, &self.z, zs)?.into_inner();
        Ok(self.apply(&kappa))
    }
    fn describe(&self) -> String {
        format!(
            "kpf-nystrom(n={}, v={}, input={}, output={}, lambda={:e}, prior={}, seed={})",
            self.n(),
            self.landmark_count(),
            self.input_kernel,
            self.output_kernel,
            self.lambda,
            self.prior.distribution,
            self.prior.seed
        )
    }
}
