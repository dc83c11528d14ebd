use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use kpf::data_io::{
    load_model, normalize_to_sphere, read_points, save_model, write_atomic, write_points, ToyDistribution,
    ToySpec,
};
use kpf::density::estimate_density;
use kpf::evaluation::gamma_sweep;
use kpf::operator::{fit_with_draws, InverseStrategy};
use kpf::{
    evaluate_density, generate, median_heuristic_bandwidth, mmd_squared, sample_prior, FitOptions,
    GenerateOptions, KernelSpec, KpfError, MmdEstimator, PointSet, PreimageMethod, PriorDistribution,
    PriorSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernel-embedded Perron-Frobenius generative modelling.
#[derive(Parser)]
#[command(name = "kpf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a 2D toy dataset and write it as CSV.
    GenToy {
        /// ring, two-moons, pinwheel, checkerboard or gaussian-grid, with
        /// optional parameters such as `ring:radius=1,noise=0.05`.
        #[arg(long, value_parser = ToyDistribution::from_str)]
        dist: ToyDistribution,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a kPF model and save it as an archive directory.
    Fit {
        /// Training data CSV.
        #[arg(long)]
        data: PathBuf,
        /// `sphere[:dim=<d>]` or `gaussian[:dim=<d>]`; dim defaults to the
        /// data dimension.
        #[arg(long, default_value = "sphere")]
        prior: String,
        /// Kernel on prior samples, e.g. `ntk:depth=3` or `rbf:sigma=median`.
        #[arg(long, value_parser = KernelArg::parse)]
        input_kernel: KernelArg,
        /// Kernel on data, e.g. `rbf:sigma=median`.
        #[arg(long, value_parser = KernelArg::parse)]
        output_kernel: KernelArg,
        /// Ridge λ. Defaults to 1e-3·trace(K)/n. With 0 a singular Gram is an
        /// error rather than a pseudoinverse fallback.
        #[arg(long)]
        lambda: Option<f64>,
        /// Project data rows onto the unit sphere before fitting.
        #[arg(long)]
        normalize_sphere: bool,
        /// Seed for the prior draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_model: PathBuf,
        /// Also store L and the inverse so loading can verify them.
        #[arg(long)]
        cache: bool,
    },
    /// Generate samples from a fitted model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        /// Neighborhood size, 1..=n_train.
        #[arg(long, default_value_t = 5)]
        gamma: usize,
        /// wfm, wfm-sphere or mds. Defaults to wfm-sphere for unit-norm
        /// training data and wfm otherwise.
        #[arg(long, value_parser = PreimageMethod::from_str)]
        preimage: Option<PreimageMethod>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the transferred density on reference points and evaluate it.
    ///
    /// Output values are density ratios with respect to the reference
    /// distribution; multiply by its density to get an absolute density.
    Density {
        #[arg(long)]
        model: PathBuf,
        /// Reference points CSV, see `make-ref`.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-3)]
        alpha_prime: f64,
        /// Query points CSV.
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw reference points: uniform on a box, optionally mixed with
    /// resampled rows of a data file.
    MakeRef {
        #[arg(long, allow_negative_numbers = true)]
        low: f64,
        #[arg(long, allow_negative_numbers = true)]
        high: f64,
        /// Box dimension. Defaults to the dimension of `--mix`.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        n: usize,
        /// CSV whose rows are resampled into the reference set.
        #[arg(long)]
        mix: Option<PathBuf>,
        /// Fraction of reference points taken from `--mix`.
        #[arg(long, default_value_t = 0.2)]
        mix_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the squared MMD between two point sets.
    EvalMmd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// `sigma=median` resolves against `--b`.
        #[arg(long, default_value = "rbf:sigma=median", value_parser = KernelArg::parse)]
        kernel: KernelArg,
        /// biased or unbiased.
        #[arg(long, default_value = "unbiased", value_parser = MmdEstimator::from_str)]
        estimator: MmdEstimator,
    },
    /// Print `gamma,mmd2` rows scoring samples against a holdout set.
    SweepGamma {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated neighborhood sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<usize>,
        #[arg(long)]
        holdout: PathBuf,
        /// Samples generated per γ.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug)]
enum KernelArg {
    Fixed(KernelSpec),
    RbfMedian,
}

impl KernelArg {
    fn parse(s: &str) -> Result<Self, KpfError> {
        if let Some(rest) = s.trim().strip_prefix("rbf:") {
            if rest.trim().replace(' ', "") == "sigma=median" {
                return Ok(KernelArg::RbfMedian);
            }
        }
        s.parse().map(KernelArg::Fixed)
    }

    fn resolve(self, against: &PointSet, what: &str) -> kpf::Result<KernelSpec> {
        match self {
            KernelArg::Fixed(k) => Ok(k),
            KernelArg::RbfMedian => {
                let sigma = median_heuristic_bandwidth(against)?;
                log::info!("{what}: median bandwidth {sigma:.6}");
                KernelSpec::rbf(sigma)
            }
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> anyhow::Error {
    KpfError::InvalidArgument(msg.to_string()).into()
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenToy { dist, n, seed, out } => {
            let points = kpf::data_io::generate_toy(&ToySpec { distribution: dist, seed }, n)?;
            write_points(&points, &out)?;
            log::info!("wrote {n} points to {}", out.display());
        }
        Command::Fit {
            data,
            prior,
            input_kernel,
            output_kernel,
            lambda,
            normalize_sphere,
            seed,
            out_model,
            cache,
        } => {
            let mut x = read_points(&data)?;
            if normalize_sphere {
                x = normalize_to_sphere(&x)?;
            }
            if x.len() < 2 {
                bail!(usage(format!("need at least 2 data points, got {}", x.len())));
            }
            let prior = PriorSpec {
                distribution: PriorDistribution::parse(&prior, x.dim())?,
                seed,
            };
            if let Some(l) = lambda {
                if !(l >= 0.0 && l.is_finite()) {
                    bail!(usage(format!("lambda must be non-negative, got {l}")));
                }
            }
            let z = sample_prior(&prior.distribution, x.len(), prior.seed);
            let kin = input_kernel.resolve(&z, "input kernel")?;
            let kout = output_kernel.resolve(&x, "output kernel")?;
            let opts = FitOptions {
                lambda,
                inverse: InverseStrategy::Auto,
                pinv_fallback: lambda != Some(0.0),
            };
            let model = fit_with_draws(&x, z, &prior, kin, kout, &opts)?;
            log::info!(
                "fitted n={} d={} prior={} lambda={:e} input={} output={} inverse={:?}",
                model.n(),
                x.dim(),
                prior.distribution,
                model.lambda(),
                kin,
                kout,
                model.inverse_method()
            );
            save_model(&model, &out_model, cache)?;
            log::info!("saved model to {}", out_model.display());
        }
        Command::Sample {
            model,
            n,
            gamma,
            preimage,
            seed,
            out,
        } => {
            let model = load_model(&model)?;
            if gamma == 0 || gamma > model.n() {
                bail!(usage(format!("--gamma must be in 1..={}, got {gamma}", model.n())));
            }
            let opts = GenerateOptions {
                method: preimage,
                ..GenerateOptions::new(gamma, seed)
            };
            let batch = generate(&model, n, &opts)?;
            write_points(&batch.points, &out)?;
            log::info!("wrote {n} samples (gamma={gamma}, {}) to {}", batch.method, out.display());
        }
        Command::Density {
            model,
            reference,
            alpha,
            alpha_prime,
            eval,
            out,
        } => {
            let model = load_model(&model)?;
            let reference = read_points(&reference)?;
            let queries = read_points(&eval)?;
            if queries.dim() != model.data().dim() {
                return Err(KpfError::DimensionMismatch {
                    expected: model.data().dim(),
                    actual: queries.dim(),
                })
                .context("query points do not match the model's data dimension");
            }
            let est = estimate_density(&model, &reference, alpha, alpha_prime)?;
            let values = evaluate_density(&est, &queries)?;
            write_atomic(&out, |w| {
                let err = |e| KpfError::Io {
                    path: out.clone(),
                    source: e,
                };
                let header: Vec<String> = (0..queries.dim()).map(|i| format!("dim_{i}")).collect();
                writeln!(w, "{},density_ratio", header.join(",")).map_err(err)?;
                for (q, v) in queries.iter().zip(&values) {
                    let coords: Vec<String> = q.iter().map(|c| format!("{c:?}")).collect();
                    writeln!(w, "{},{v:?}", coords.join(",")).map_err(err)?;
                }
                Ok(())
            })?;
            log::info!("wrote {} density values to {}", values.len(), out.display());
        }
        Command::MakeRef {
            low,
            high,
            dim,
            n,
            mix,
            mix_fraction,
            seed,
            out,
        } => {
            let points = make_ref(low, high, dim, n, mix.as_deref(), mix_fraction, seed)?;
            write_points(&points, &out)?;
            log::info!("wrote {n} reference points to {}", out.display());
        }
        Command::EvalMmd { a, b, kernel, estimator } => {
            let a = read_points(&a)?;
            let b = read_points(&b)?;
            let kernel = kernel.resolve(&b, "mmd kernel")?;
            let r = mmd_squared(&a, &b, &kernel, estimator)?;
            if r.below_floor {
                log::warn!("MMD² is below the estimator's noise floor");
            }
            println!("{:e}", r.value);
        }
        Command::SweepGamma {
            model,
            gammas,
            holdout,
            n,
            seed,
        } => {
            let model = load_model(&model)?;
            let holdout = read_points(&holdout)?;
            let table = gamma_sweep(&model, &gammas, &holdout, n, seed)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "gamma,mmd2")?;
            for (g, v) in table {
                writeln!(out, "{g},{v:e}")?;
            }
        }
    }
    Ok(())
}

fn make_ref(
    low: f64,
    high: f64,
    dim: Option<usize>,
    n: usize,
    mix: Option<&Path>,
    fraction: f64,
    seed: u64,
) -> anyhow::Result<PointSet> {
    if low >= high || !low.is_finite() || !high.is_finite() {
        bail!(usage(format!("need finite --low < --high, got {low} and {high}")));
    }
    let mix = mix.map(read_points).transpose()?;
    let dim = match (dim, &mix) {
        (Some(d), Some(m)) if d != m.dim() => {
            return Err(KpfError::DimensionMismatch {
                expected: d,
                actual: m.dim(),
            }
            .into())
        }
        (Some(d), _) => d,
        (None, Some(m)) => m.dim(),
        (None, None) => bail!(usage("--dim is required without --mix")),
    };
    if dim == 0 || n == 0 {
        bail!(usage("--dim and --n must be positive"));
    }
    let n_mix = match &mix {
        Some(m) => {
            if !(0.0..=1.0).contains(&fraction) {
                bail!(usage(format!("--mix-fraction must be in [0, 1], got {fraction}")));
            }
            if m.is_empty() {
                bail!(usage("--mix file has no rows"));
            }
            (fraction * n as f64).round() as usize
        }
        None => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<f64> = (0..(n - n_mix) * dim).map(|_| rng.random_range(low..high)).collect();
    if let Some(m) = &mix {
        for _ in 0..n_mix {
            flat.extend_from_slice(m.point(rng.random_range(0..m.len())));
        }
    }
    Ok(PointSet::from_flat(dim, flat))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<KpfError>() {
        Some(e) if e.is_usage_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
