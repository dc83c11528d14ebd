//! Prior sampling and end-to-end sample generation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{KpfError, Result};
use crate::kernels::KernelSpec;
use crate::operator::{KpfModel, PriorDistribution, PriorSpec, TransferWeights};
use crate::points::{norm, PointSet};
use crate::preimage::{
    preimage_mds, preimage_wfm_euclidean, preimage_wfm_sphere, select_neighborhood, SphereStep,
};

/// Anything that maps prior samples to transfer weights over a set of
/// training points.
pub trait TransferOperator {
    fn training_points(&self) -> &PointSet;
    fn prior(&self) -> &PriorSpec;
    fn output_kernel(&self) -> &KernelSpec;
    /// Whether the training points lie on the unit sphere.
    fn data_on_sphere(&self) -> bool;
    /// Columns `(S, W)`: transfer weights and embedding coefficients for
    /// each column of `zs`.
    fn transfer_batch(&self, zs: &PointSet) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
    /// Short identifier for provenance records.
    fn describe(&self) -> String;
}

impl TransferOperator for KpfModel {
    fn training_points(&self) -> &PointSet {
        self.data()
    }
    fn prior(&self) -> &PriorSpec {
        KpfModel::prior(self)
    }
    fn output_kernel(&self) -> &KernelSpec {
        KpfModel::output_kernel(self)
    }
    fn data_on_sphere(&self) -> bool {
        KpfModel::data_on_sphere(self)
    }
    fn transfer_batch(&self, zs: &PointSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.transfer_weights_batch(zs)
    }
    fn describe(&self) -> String {
        format!(
            "kpf(n={}, input={}, output={}, lambda={:e}, prior={}, seed={})",
            self.n(),
            self.input_kernel(),
            KpfModel::output_kernel(self),
            self.lambda(),
            self.prior().distribution,
            self.prior().seed
        )
    }
}

fn draw(dist: &PriorDistribution, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        if let PriorDistribution::UnitSphere { .. } = dist {
            let r = norm(out);
            if r == 0.0 {
                continue;
            }
            out.iter_mut().for_each(|v| *v /= r);
        }
        return;
    }
}

/// `m` i.i.d. prior draws; sphere draws are normalized Gaussian vectors.
pub fn sample_prior(dist: &PriorDistribution, m: usize, seed: u64) -> PointSet {
    let d = dist.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = vec![0.0; m * d];
    for chunk in flat.chunks_exact_mut(d.max(1)) {
        draw(dist, &mut rng, chunk);
    }
    PointSet::from_flat(d, flat)
}

/// The RNG owning sample `index` of a generation batch. Stream 0 is left to
/// [`sample_prior`] so fit-time draws never coincide with generated ones.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreimageMethod {
    Wfm,
    WfmSphere,
    Mds,
}

impl FromStr for PreimageMethod {
    type Err = KpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wfm" => Ok(PreimageMethod::Wfm),
            "wfm-sphere" => Ok(PreimageMethod::WfmSphere),
            "mds" => Ok(PreimageMethod::Mds),
            other => Err(KpfError::invalid(format!(
                "unknown preimage method `{other}` (expected wfm, wfm-sphere or mds)"
            ))),
        }
    }
}

impl fmt::Display for PreimageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PreimageMethod::Wfm => "wfm",
            PreimageMethod::WfmSphere => "wfm-sphere",
            PreimageMethod::Mds => "mds",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateOptions {
    pub gamma: usize,
    /// `None` picks spherical wFM for unit-norm training data and Euclidean
    /// wFM otherwise.
    pub method: Option<PreimageMethod>,
    pub seed: u64,
    pub sphere_step: SphereStep,
    pub max_attempts: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            gamma: 5,
            method: None,
            seed: 0,
            sphere_step: SphereStep::CumulativeFraction,
            max_attempts: 10,
        }
    }
}

impl GenerateOptions {
    pub fn new(gamma: usize, seed: u64) -> Self {
        Self {
            gamma,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: PointSet,
    pub model: String,
    pub gamma: usize,
    pub method: PreimageMethod,
    pub seed: u64,
}

const CHUNK: usize = 256;

fn preimage(
    op: &impl TransferOperator,
    tw: &TransferWeights,
    gamma: usize,
    method: PreimageMethod,
    step: SphereStep,
) -> Result<Vec<f64>> {
    let nb = select_neighborhood(op.training_points(), tw.s.as_slice(), gamma)?;
    match method {
        PreimageMethod::Wfm => preimage_wfm_euclidean(&nb),
        PreimageMethod::WfmSphere => preimage_wfm_sphere(&nb, step),
        PreimageMethod::Mds => preimage_mds(&nb, op.output_kernel(), tw.rkhs_sq_norm()),
    }
}

/// Generates `m` samples: for each fresh prior draw compute transfer
/// weights, take the top-γ neighborhood and apply the preimage map.
///
/// Sample `i` uses its own RNG stream, so results do not depend on chunking.
/// A sample whose preimage fails is redrawn up to `max_attempts` times.
pub fn generate(op: &impl TransferOperator, m: usize, opts: &GenerateOptions) -> Result<SampleBatch> {
    let x = op.training_points();
    let n = x.len();
    if opts.gamma == 0 || opts.gamma > n {
        return Err(KpfError::invalid(format!(
            "gamma must be in 1..={n}, got {}",
            opts.gamma
        )));
    }
    let method = opts.method.unwrap_or(if op.data_on_sphere() {
        PreimageMethod::WfmSphere
    } else {
        PreimageMethod::Wfm
    });
    let dist = op.prior().distribution;
    let d_z = dist.dim();
    let mut out = Vec::with_capacity(m * x.dim());

    let mut start = 0;
    while start < m {
        let end = (start + CHUNK).min(m);
        let mut rngs: Vec<ChaCha8Rng> = (start..end).map(|i| sample_rng(opts.seed, i)).collect();
        let mut flat = vec![0.0; (end - start) * d_z];
        for (rng, chunk) in rngs.iter_mut().zip(flat.chunks_exact_mut(d_z)) {
            draw(&dist, rng, chunk);
        }
        let zs = PointSet::from_flat(d_z, flat);
        let (s, w) = op.transfer_batch(&zs)?;
        for (j, rng) in rngs.iter_mut().enumerate() {
            let index = start + j;
            let mut tw = TransferWeights {
                s: s.column(j).into_owned(),
                coeffs: w.column(j).into_owned(),
                source: zs.point(j).to_vec(),
            };
            let mut attempt = 1;
            let point = loop {
                match preimage(op, &tw, opts.gamma, method, opts.sphere_step) {
                    Ok(p) => break p,
                    Err(e) if attempt >= opts.max_attempts => {
                        return Err(KpfError::GenerationFailed {
                            index,
                            attempts: attempt,
                            source: Box::new(e),
                        })
                    }
                    Err(e) => {
                        log::debug!("sample {index} attempt {attempt} failed: {e}; redrawing");
                        attempt += 1;
                        let mut z = vec![0.0; d_z];
                        draw(&dist, rng, &mut z);
                        let (s1, w1) = op.transfer_batch(&PointSet::from_flat(d_z, z.clone()))?;
                        tw = TransferWeights {
                            s: s1.column(0).into_owned(),
                            coeffs: w1.column(0).into_owned(),
                            source: z,
                        };
                    }
                }
            };
            out.extend_from_slice(&point);
        }
        start = end;
    }

    Ok(SampleBatch {
        points: PointSet::from_flat(x.dim(), out),
        model: op.describe(),
        gamma: opts.gamma,
        method,
        seed: opts.seed,
    })
}
