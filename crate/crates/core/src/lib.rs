//! Kernel-embedded Perron-Frobenius (kPF) operators.
//!
//! A kPF operator maps the kernel mean embedding of a simple prior
//! distribution onto that of a data distribution. Fitting is closed form:
//! draw `n` prior samples `Z`, pair them with the `n` data points `X` in any
//! order, and cache `L = l(X, X)` and `(K + λnI)^{-1}` with `K = k(Z, Z)`.
//! New samples come from pushing fresh prior draws through the operator and
//! solving a preimage problem over the top-γ training neighbors.

pub mod data_io;
pub mod density;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod numerics;
pub mod nystrom;
pub mod operator;
pub mod points;
pub mod preimage;
pub mod sampling;

pub use density::{estimate_density, evaluate_density, DensityEstimate};
pub use error::{KpfError, Result};
pub use evaluation::{mmd_squared, MmdEstimator, MmdResult};
pub use kernels::{eval_kernel, gram, median_heuristic_bandwidth, self_gram, GramMatrix, KernelSpec};
pub use numerics::{exact_pinv, hyperpower_pinv, regularized_inverse, InverseResult};
pub use nystrom::{fit_nystrom, nystrom_transfer_weights, NystromModel};
pub use operator::{fit, transfer_weights, FitOptions, KpfModel, PriorDistribution, PriorSpec, TransferWeights};
pub use points::PointSet;
pub use preimage::Neighborhood;
pub use sampling::{generate, sample_prior, GenerateOptions, PreimageMethod, SampleBatch, TransferOperator};
