//! MCMC samplers for subposteriors in unconstrained space.
//!
//! Chains start at the origin with uniform jitter, run in parallel, and are
//! pooled in chain order. Per-chain generators come from
//! [`crate::rng::stream`] keyed by the configured seed and chain index.

mod ess;
mod hmc;
mod rwm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ess::{effective_sample_size, EssEstimate};
pub use hmc::{hmc_sample, ADAPT_ACCEPTANCE, STEP_JITTER};
pub use rwm::rwm_sample;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Unnormalized log density over `ℝ^D`.
///
/// Implementations fold any reparameterization Jacobian into
/// [`TargetModel::log_density`], so samplers and flows only ever see `ℝ^D`.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    /// May return `-inf` outside the support; never NaN.
    fn log_density(&self, theta: &[f64]) -> f64;

    /// Gradient of [`TargetModel::log_density`], if available.
    fn grad_log_density(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Maps an unconstrained point back to the model's natural parameters.
    fn to_constrained(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn label(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Rwm,
    Hmc {
        step_size: f64,
        leapfrog_steps: usize,
        /// Tune the step size during warmup by dual averaging toward
        /// `target_accept`; `step_size` is then the starting value.
        #[serde(default)]
        adapt_step: bool,
        #[serde(default = "default_target_accept")]
        target_accept: f64,
    },
}

fn default_target_accept() -> f64 {
    ADAPT_ACCEPTANCE
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    /// Total draws kept, pooled over chains.
    pub n_samples: usize,
    /// Warmup iterations per chain.
    pub n_warmup: usize,
    pub n_chains: usize,
    pub algorithm: Algorithm,
    /// Half-width of the uniform jitter around the origin used for chain starts.
    pub init_radius: f64,
    /// Sampling-phase transitions per kept draw.
    pub thin: usize,
    pub seed: u64,
}

impl McmcConfig {
    /// Warmup equal to the per-chain sample count.
    pub fn new(n_samples: usize, n_chains: usize, algorithm: Algorithm, seed: u64) -> Self {
        McmcConfig {
            n_samples,
            n_warmup: n_samples.div_ceil(n_chains.max(1)),
            n_chains,
            algorithm,
            init_radius: 2.0,
            thin: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_warmup == 0 || self.n_chains == 0 || self.thin == 0 {
            return Err(Error::Config("n_samples, n_warmup, n_chains and thin must be positive".into()));
        }
        if self.n_chains > self.n_samples {
            return Err(Error::Config(format!("{} chains for {} samples", self.n_chains, self.n_samples)));
        }
        if let Algorithm::Hmc { step_size, leapfrog_steps, target_accept, .. } = self.algorithm {
            if !(target_accept > 0.0 && target_accept < 1.0) {
                return Err(Error::Config(format!("HMC target acceptance {target_accept} must lie in (0, 1)")));
            }
            if leapfrog_steps == 0 {
                return Err(Error::Config("HMC needs at least one leapfrog step".into()));
            }
            if !(step_size > 0.0 && step_size.is_finite()) {
                return Err(Error::Config(format!("HMC step size {step_size} must be positive")));
            }
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::Config("init_radius must be nonnegative".into()));
        }
        Ok(())
    }

    /// Draws kept by chain `c`; the remainder goes to the first chains.
    pub(crate) fn draws_for_chain(&self, c: usize) -> usize {
        self.n_samples / self.n_chains + usize::from(c < self.n_samples % self.n_chains)
    }
}

/// Per-chain sampler diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDiagnostics {
    /// Post-warmup acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Final proposal scale (RWM) or step size (HMC) per chain.
    pub step_scales: Vec<f64>,
    /// Divergent HMC transitions per chain (post-warmup).
    pub divergences: Vec<usize>,
}

/// Pooled MCMC draws, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub values: Matrix,
    pub label: String,
    pub shard: Option<usize>,
    pub diagnostics: ChainDiagnostics,
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Dispatches on [`McmcConfig::algorithm`].
pub fn sample(target: &dyn TargetModel, cfg: &McmcConfig) -> Result<SampleSet> {
    match cfg.algorithm {
        Algorithm::Rwm => rwm_sample(target, cfg),
        Algorithm::Hmc { .. } => hmc_sample(target, cfg),
    }
}

pub(crate) struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub acceptance: f64,
    pub step_scale: f64,
    pub divergences: usize,
}

/// Runs `run_chain` for every chain in parallel and pools the results in chain order.
pub(crate) fn run_chains<F>(target: &dyn TargetModel, cfg: &McmcConfig, run_chain: F) -> Result<SampleSet>
where
    F: Fn(usize, &mut rand_chacha::ChaCha8Rng) -> Result<ChainOutput> + Sync,
{
    cfg.validate()?;
    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(cfg.seed, crate::rng::Stage::Chain, c as u64);
            run_chain(c, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = ChainDiagnostics::default();
    let mut rows = Vec::with_capacity(cfg.n_samples);
    for out in outputs {
        diagnostics.acceptance.push(out.acceptance);
        diagnostics.step_scales.push(out.step_scale);
        diagnostics.divergences.push(out.divergences);
        rows.extend(out.draws);
    }
    Ok(SampleSet {
        values: Matrix::from_rows(&rows)?,
        label: target.label().to_string(),
        shard: None,
        diagnostics,
    })
}

/// Origin plus uniform jitter, retried until the density is finite.
pub(crate) fn initial_point<R: rand::Rng>(
    target: &dyn TargetModel,
    radius: f64,
    chain: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let x: Vec<f64> = (0..target.dim())
            .map(|_| if radius > 0.0 { rng.random_range(-radius..=radius) } else { 0.0 })
            .collect();
        let lp = target.log_density(&x);
        if lp.is_finite() {
            return Ok((x, lp));
        }
    }
    Err(Error::Initialization { chain, attempts: ATTEMPTS })
}

#[cfg(test)]
pub(crate) mod test_targets {
    use super::TargetModel;

    /// Independent normals with given means and standard deviations.
    pub struct DiagNormal {
        pub mean: Vec<f64>,
        pub sd: Vec<f64>,
    }

    impl TargetModel for DiagNormal {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            x.iter()
                .zip(&self.mean)
                .zip(&self.sd)
                .map(|((x, m), s)| -0.5 * ((x - m) / s).powi(2))
                .sum()
        }
        fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(x.iter().zip(&self.mean).zip(&self.sd).map(|((x, m), s)| -(x - m) / (s * s)).collect())
        }
        fn label(&self) -> &str {
            "diag-normal"
        }
    }

    /// Uniform on `[-1, 1]^D`.
    pub struct UnitBox(pub usize);

    impl TargetModel for UnitBox {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            if x.iter().all(|v| v.abs() <= 1.0) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        fn label(&self) -> &str {
            "unit-box"
        }
    }

    /// Density zero everywhere.
    pub struct Nowhere;

    impl TargetModel for Nowhere {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, _: &[f64]) -> f64 {
            f64::NEG_INFINITY
        }
        fn label(&self) -> &str {
            "nowhere"
        }
    }
}
