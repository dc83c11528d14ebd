//! Matrix inversion primitives: regularized inverse, SVD pseudoinverse and
//! the hyperpower iteration.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{KpfError, Result};

/// How an inverse was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InverseMethod {
    /// `(K + λnI)^{-1}` by Cholesky.
    Regularized { lambda: f64 },
    ExactPinv,
    Hyperpower { iterations: usize, residual: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseResult {
    pub matrix: DMatrix<f64>,
    pub method: InverseMethod,
}

/// Relative singular-value cutoff for [`exact_pinv`].
pub const PINV_RTOL: f64 = 1e-12;

fn check_square(k: &DMatrix<f64>) -> Result<()> {
    if !k.is_square() {
        return Err(KpfError::invalid(format!(
            "expected a square matrix, got {}×{}",
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(())
}

/// Cholesky factor of `K + shift·I`.
pub(crate) fn cholesky_shifted(k: &DMatrix<f64>, shift: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut a = k.clone();
    if shift != 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
    }
    Cholesky::new(a)
}

/// `(K + λnI)^{-1}` through a Cholesky factorization.
///
/// Fails with [`KpfError::Singular`] when `K + λnI` is not numerically
/// positive definite; with `λ = 0` the caller should fall back to a
/// pseudoinverse.
pub fn regularized_inverse(k: &DMatrix<f64>, lambda: f64, n: usize) -> Result<InverseResult> {
    check_square(k)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(KpfError::invalid(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let chol = cholesky_shifted(k, lambda * n as f64).ok_or_else(|| KpfError::Singular {
        what: "prior kernel".into(),
        hint: if lambda == 0.0 {
            "K is not positive definite; use lambda > 0 or a pseudoinverse".into()
        } else {
            format!("K + λnI is not positive definite at λ = {lambda}; increase lambda")
        },
    })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(InverseResult {
        matrix: inv,
        method: InverseMethod::Regularized { lambda },
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Moore-Penrose pseudoinverse by SVD, dropping singular values below
/// `1e-12·σ_max`.
pub fn exact_pinv(k: &DMatrix<f64>) -> InverseResult {
    let (r, c) = k.shape();
    if r == 0 || c == 0 {
        return InverseResult {
            matrix: DMatrix::zeros(c, r),
            method: InverseMethod::ExactPinv,
        };
    }
    let svd = k.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_RTOL * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut matrix = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // matrix += v_i u_iᵀ / s
            matrix.ger(1.0 / s, &vt.row(i).transpose(), &u.column(i), 1.0);
        }
    }
    InverseResult {
        matrix,
        method: InverseMethod::ExactPinv,
    }
}

/// Stopping rule for [`hyperpower_pinv`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperpowerOptions {
    pub max_iters: usize,
    /// Stop once `‖KZK − K‖_F / ‖K‖_F ≤ tol`. `None` runs all iterations.
    pub tol: Option<f64>,
}

impl Default for HyperpowerOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: None,
        }
    }
}

/// `‖KZK − K‖_F / ‖K‖_F`.
pub fn pinv_residual(k: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let kzk = k * z * k;
    (kzk - k).norm() / k.norm()
}

/// Iterative pseudoinverse by the order-7 hyperpower method:
/// `Z ← ¼·Z(13I − KZ(15I − KZ(7I − KZ)))` from `Z₁ = Kᵀ/(‖K‖₁‖K‖∞)`.
///
/// Non-convergence is not an error; inspect the recorded residual.
pub fn hyperpower_pinv(k: &DMatrix<f64>, opts: HyperpowerOptions) -> Result<InverseResult> {
    check_square(k)?;
    let n = k.nrows();
    let norm1 = (0..n)
        .map(|j| k.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let norm_inf = (0..n)
        .map(|i| k.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return Err(KpfError::invalid("hyperpower pseudoinverse of a zero matrix"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut z = k.transpose() / (norm1 * norm_inf);
    let mut residual = pinv_residual(k, &z);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if opts.tol.is_some_and(|t| residual <= t) {
            break;
        }
        let kz = k * &z;
        let inner = &eye * 7.0 - &kz;
        let inner = &eye * 15.0 - &kz * inner;
        let inner = &eye * 13.0 - &kz * inner;
        z = (&z * inner) * 0.25;
        iterations += 1;
        residual = pinv_residual(k, &z);
        log::trace!("hyperpower iteration {iterations}: residual {residual:e}");
    }
    if !residual.is_finite() {
        return Err(KpfError::Numerical("hyperpower iteration diverged".into()));
    }
    Ok(InverseResult {
        matrix: z,
        method: InverseMethod::Hyperpower {
            iterations,
            residual,
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Random SPD matrix `Q diag(λ) Qᵀ` with eigenvalues spread log-uniformly
    /// over `[1, cond]`.
    pub(crate) fn random_spd(seed: u64, n: usize, cond: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let eig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
            cond.powf(i as f64 / (n - 1).max(1) as f64)
        }));
        let mut k = &q * eig * q.transpose();
        symmetrize(&mut k);
        k
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn regularized_identity_cases() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(regularized_inverse(&i2, 0.0, 2).unwrap().matrix, i2);
        let half = regularized_inverse(&i2, 0.5, 2).unwrap().matrix;
        assert!(rel(&half, &(&i2 * 0.5)) < 1e-15);
    }

    #[test]
    fn regularized_matches_lu_oracle() {
        let k = random_spd(1, 20, 50.0);
        let lambda = 1e-3;
        let r = regularized_inverse(&k, lambda, 20).unwrap();
        let shifted = &k + DMatrix::identity(20, 20) * (lambda * 20.0);
        let oracle = shifted.clone().lu().try_inverse().unwrap();
        assert!((&r.matrix - &oracle).norm() < 1e-10);
        let prod = &r.matrix * shifted;
        assert!(rel(&prod, &DMatrix::identity(20, 20)) < 1e-8);
    }

    #[test]
    fn regularized_converges_as_lambda_vanishes() {
        let k = random_spd(2, 15, 1e4);
        let inv = k.clone().lu().try_inverse().unwrap();
        let r = regularized_inverse(&k, 1e-10, 15).unwrap().matrix;
        assert!(rel(&r, &inv) < 1e-6, "{}", rel(&r, &inv));
    }

    #[test]
    fn regularized_rejects_singular() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            regularized_inverse(&k, 0.0, 2),
            Err(KpfError::Singular { .. })
        ));
        assert!(regularized_inverse(&k, -1.0, 2).is_err());
    }

    #[test]
    fn pinv_small_cases() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(exact_pinv(&d).matrix, d);
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!(rel(&exact_pinv(&i3).matrix, &i3) < 1e-15);
    }

    fn penrose(k: &DMatrix<f64>, z: &DMatrix<f64>) -> [f64; 4] {
        let kz = k * z;
        let zk = z * k;
        [
            rel(&(&kz * k), k),
            rel(&(&zk * z), z),
            rel(&kz.transpose(), &kz),
            rel(&zk.transpose(), &zk),
        ]
    }

    #[test]
    fn pinv_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let square = DMatrix::from_fn(10, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let tall = DMatrix::from_fn(8, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        // rank 3 product
        let a = DMatrix::from_fn(7, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let low = &a * a.transpose();
        for k in [square, tall, low] {
            let z = exact_pinv(&k).matrix;
            for (i, v) in penrose(&k, &z).iter().enumerate() {
                assert!(*v < 1e-10, "condition {i}: {v}");
            }
        }
    }

    #[test]
    fn hyperpower_fixed_points() {
        let i4 = DMatrix::<f64>::identity(4, 4);
        // ‖I‖₁‖I‖∞ = 1 so Z₁ = I and the iteration never moves.
        let r = hyperpower_pinv(&i4, HyperpowerOptions { max_iters: 10, tol: None }).unwrap();
        assert_eq!(r.matrix, i4);
        let two = DMatrix::from_element(1, 1, 2.0);
        let r = hyperpower_pinv(&two, HyperpowerOptions::default()).unwrap();
        assert_eq!(r.matrix[(0, 0)], 0.5);
    }

    #[test]
    fn hyperpower_matches_svd_oracle() {
        let k = random_spd(4, 50, 100.0);
        let r = hyperpower_pinv(&k, HyperpowerOptions { max_iters: 30, tol: None }).unwrap();
        let oracle = exact_pinv(&k).matrix;
        let err = (&r.matrix - &oracle).norm();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn hyperpower_tolerance_stops_early() {
        let k = random_spd(5, 30, 10.0);
        let r = hyperpower_pinv(&k, HyperpowerOptions { max_iters: 50, tol: Some(1e-10) }).unwrap();
        match r.method {
            InverseMethod::Hyperpower { iterations, residual } => {
                assert!(iterations < 50);
                assert!(residual <= 1e-10);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn hyperpower_rejects_zero_and_rectangular() {
        assert!(hyperpower_pinv(&DMatrix::zeros(3, 3), HyperpowerOptions::default()).is_err());
        assert!(hyperpower_pinv(&DMatrix::zeros(3, 2), HyperpowerOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hyperpower_residual_monotone_after_three(seed in 0u64..10_000, cond in 1.5f64..100.0) {
            let k = random_spd(seed, 12, cond);
            let mut last = f64::INFINITY;
            for iters in 3..=12 {
                let r = hyperpower_pinv(&k, HyperpowerOptions { max_iters: iters, tol: None }).unwrap();
                let InverseMethod::Hyperpower { residual, .. } = r.method else { unreachable!() };
                prop_assert!(residual <= last * (1.0 + 1e-9) + 1e-13, "{} > {}", residual, last);
                last = residual;
            }
        }
    }
}
