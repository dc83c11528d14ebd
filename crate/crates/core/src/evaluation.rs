//! Sample-quality metrics and model selection: MMD, bandwidth grid search,
//! the KDE baseline, γ sweeps and a nearest-neighbor memorization audit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, KpfError, Result};
use crate::kernels::{median_heuristic_bandwidth, KernelSpec};
use crate::points::{norm, sq_dist, PointSet};
use crate::sampling::{generate, GenerateOptions, PreimageMethod, TransferOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmdEstimator {
    Biased,
    Unbiased,
}

impl FromStr for MmdEstimator {
    type Err = KpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(MmdEstimator::Biased),
            "unbiased" => Ok(MmdEstimator::Unbiased),
            other => Err(KpfError::invalid(format!(
                "unknown estimator `{other}` (expected biased or unbiased)"
            ))),
        }
    }
}

impl fmt::Display for MmdEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MmdEstimator::Biased => "biased",
            MmdEstimator::Unbiased => "unbiased",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdResult {
    /// Squared MMD.
    pub value: f64,
    pub estimator: MmdEstimator,
    pub kernel: KernelSpec,
    pub n_a: usize,
    pub n_b: usize,
    /// Unbiased value below the heuristic floor `−2/min(n_a, n_b)`.
    pub below_floor: bool,
}

fn self_sum(kernel: &KernelSpec, a: &PointSet, with_diag: bool) -> f64 {
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..a.len() {
        let p = a.point(i);
        for j in 0..i {
            off += kernel.eval_unchecked(p, a.point(j));
        }
        if with_diag {
            diag += kernel.eval_unchecked(p, p);
        }
    }
    2.0 * off + diag
}

fn cross_sum(kernel: &KernelSpec, a: &PointSet, b: &PointSet) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| kernel.eval_unchecked(p, q)).sum::<f64>())
        .sum()
}

fn check_angular(kernel: &KernelSpec, set: &PointSet) -> Result<()> {
    if kernel.is_angular() && set.iter().any(|p| norm(p) == 0.0) {
        return Err(KpfError::Domain(format!("{kernel} is undefined at the zero vector")));
    }
    Ok(())
}

/// Squared MMD between two samples.
pub fn mmd_squared(a: &PointSet, b: &PointSet, kernel: &KernelSpec, estimator: MmdEstimator) -> Result<MmdResult> {
    kernel.validate()?;
    check_dim(a.dim(), b.dim())?;
    check_angular(kernel, a)?;
    check_angular(kernel, b)?;
    let (na, nb) = (a.len(), b.len());
    let min = match estimator {
        MmdEstimator::Biased => 1,
        MmdEstimator::Unbiased => 2,
    };
    if na < min || nb < min {
        return Err(KpfError::invalid(format!(
            "{estimator} MMD needs at least {min} points per sample, got {na} and {nb}"
        )));
    }
    let (fa, fb) = (na as f64, nb as f64);
    let cross = cross_sum(kernel, a, b) / (fa * fb);
    let value = match estimator {
        MmdEstimator::Biased => {
            self_sum(kernel, a, true) / (fa * fa) + self_sum(kernel, b, true) / (fb * fb) - 2.0 * cross
        }
        MmdEstimator::Unbiased => {
            self_sum(kernel, a, false) / (fa * (fa - 1.0)) + self_sum(kernel, b, false) / (fb * (fb - 1.0))
                - 2.0 * cross
        }
    };
    let below_floor = estimator == MmdEstimator::Unbiased && value < -2.0 / na.min(nb) as f64;
    if below_floor {
        log::warn!("unbiased MMD² {value:e} is below the heuristic floor");
    }
    Ok(MmdResult {
        value,
        estimator,
        kernel: *kernel,
        n_a: na,
        n_b: nb,
        below_floor,
    })
}

/// Permutation-test p-value for the unbiased MMD² statistic.
pub fn mmd_permutation_test(
    a: &PointSet,
    b: &PointSet,
    kernel: &KernelSpec,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    let observed = mmd_squared(a, b, kernel, MmdEstimator::Unbiased)?.value;
    let pooled = a.concat(b)?;
    let n = pooled.len();
    let k = crate::kernels::self_gram(kernel, &pooled)?.into_inner();
    let na = a.len();
    let (fa, fb) = (na as f64, (n - na) as f64);
    let stat = |idx: &[usize]| {
        let (ia, ib) = idx.split_at(na);
        let sum = |x: &[usize], y: &[usize]| -> f64 { x.iter().map(|&i| y.iter().map(|&j| k[(i, j)]).sum::<f64>()).sum() };
        let diag = |x: &[usize]| -> f64 { x.iter().map(|&i| k[(i, i)]).sum() };
        (sum(ia, ia) - diag(ia)) / (fa * (fa - 1.0)) + (sum(ib, ib) - diag(ib)) / (fb * (fb - 1.0))
            - 2.0 * sum(ia, ib) / (fa * fb)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut exceed = 0;
    for _ in 0..permutations {
        idx.shuffle(&mut rng);
        if stat(&idx) >= observed {
            exceed += 1;
        }
    }
    Ok((exceed + 1) as f64 / (permutations + 1) as f64)
}

/// RBF kernel at the median heuristic bandwidth of `reference`.
pub fn median_rbf(reference: &PointSet) -> Result<KernelSpec> {
    KernelSpec::rbf(median_heuristic_bandwidth(reference)?)
}

/// Mean over coordinates of the per-coordinate sample standard deviation.
pub fn sigma_data(x: &PointSet) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(KpfError::invalid("sigma_data needs at least 2 points"));
    }
    let d = x.dim();
    let mut total = 0.0;
    for c in 0..d {
        let mean = x.iter().map(|p| p[c]).sum::<f64>() / n as f64;
        let var = x.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += var.sqrt();
    }
    Ok(total / d as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSearchOptions {
    pub i_max: u32,
    /// Samples per candidate; `None` uses `|holdout|`.
    pub m: Option<usize>,
    pub gamma: usize,
    pub method: Option<PreimageMethod>,
    /// Generation repeats averaged per candidate.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for GridSearchOptions {
    fn default() -> Self {
        Self {
            i_max: 8,
            m: None,
            gamma: 5,
            method: None,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub sigma: f64,
    pub sigma_data: f64,
    /// `(σ, mean unbiased poly-3 MMD²)` per candidate, in grid order.
    pub table: Vec<(f64, f64)>,
}

/// Grid search of the output RBF bandwidth over `2^{-i}·σ_data`,
/// `i = 1..=i_max`, scored by degree-3 polynomial MMD² to `holdout`.
///
/// `factory` fits a model for a given output kernel.
pub fn select_bandwidth_grid<M, F>(
    mut factory: F,
    data: &PointSet,
    holdout: &PointSet,
    opts: &GridSearchOptions,
) -> Result<GridSearchResult>
where
    M: TransferOperator,
    F: FnMut(KernelSpec) -> Result<M>,
{
    if opts.i_max == 0 {
        return Err(KpfError::invalid("bandwidth grid is empty (i_max = 0)"));
    }
    if opts.repeats == 0 {
        return Err(KpfError::invalid("grid search needs at least one repeat"));
    }
    check_dim(data.dim(), holdout.dim())?;
    let sd = sigma_data(data)?;
    let m = opts.m.unwrap_or(holdout.len());
    let poly = KernelSpec::polynomial(3, 1.0)?;
    let mut table = Vec::with_capacity(opts.i_max as usize);
    for i in 1..=opts.i_max {
        let sigma = sd * 2f64.powi(-(i as i32));
        let model = factory(KernelSpec::rbf(sigma)?)?;
        let mut total = 0.0;
        for r in 0..opts.repeats {
            let gen_opts = GenerateOptions {
                gamma: opts.gamma,
                method: opts.method,
                seed: opts.seed.wrapping_add(r as u64),
                ..GenerateOptions::default()
            };
            let batch = generate(&model, m, &gen_opts)?;
            total += mmd_squared(&batch.points, holdout, &poly, MmdEstimator::Unbiased)?.value;
        }
        let score = total / opts.repeats as f64;
        log::debug!("grid σ = {sigma:.6} (i = {i}): poly-3 MMD² = {score:e}");
        table.push((sigma, score));
    }
    let best = table
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .expect("non-empty grid");
    Ok(GridSearchResult {
        sigma: best.0,
        sigma_data: sd,
        table,
    })
}

/// KDE baseline: uniformly chosen training points plus `N(0, σ²I)` noise.
pub fn kde_sample(x: &PointSet, sigma: f64, m: usize, seed: u64) -> Result<PointSet> {
    if x.is_empty() {
        return Err(KpfError::invalid("KDE needs at least one training point"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(KpfError::invalid(format!("KDE sigma must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(m * x.dim());
    for _ in 0..m {
        let p = x.point(rng.random_range(0..x.len()));
        for &v in p {
            let e: f64 = rng.sample(StandardNormal);
            flat.push(v + sigma * e);
        }
    }
    Ok(PointSet::from_flat(x.dim(), flat))
}

/// Mean Euclidean distance from each sample to its nearest training point.
pub fn mean_nearest_distance(samples: &PointSet, train: &PointSet) -> Result<f64> {
    check_dim(train.dim(), samples.dim())?;
    if samples.is_empty() || train.is_empty() {
        return Err(KpfError::invalid("nearest-distance audit needs non-empty sets"));
    }
    let total: f64 = samples
        .iter()
        .map(|s| train.iter().map(|t| sq_dist(s, t)).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    Ok(total / samples.len() as f64)
}

/// Unbiased RBF-median MMD² against `holdout` for each γ, in input order.
/// The bandwidth is the median heuristic of `holdout`.
pub fn gamma_sweep(
    model: &impl TransferOperator,
    gammas: &[usize],
    holdout: &PointSet,
    m: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let kernel = median_rbf(holdout)?;
    gamma_sweep_with_kernel(model, gammas, holdout, m, seed, &kernel)
}

pub fn gamma_sweep_with_kernel(
    model: &impl TransferOperator,
    gammas: &[usize],
    holdout: &PointSet,
    m: usize,
    seed: u64,
    kernel: &KernelSpec,
) -> Result<Vec<(usize, f64)>> {
    let n = model.training_points().len();
    if let Some(&g) = gammas.iter().find(|&&g| g == 0 || g > n) {
        return Err(KpfError::invalid(format!("gamma must be in 1..={n}, got {g}")));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let batch = generate(model, m, &GenerateOptions::new(gamma, seed))?;
            let v = mmd_squared(&batch.points, holdout, kernel, MmdEstimator::Unbiased)?.value;
            Ok((gamma, v))
        })
        .collect()
}
