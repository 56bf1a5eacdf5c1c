//! Experiment models: generative processes, priors, likelihoods and
//! subposterior targets in unconstrained coordinates.

mod data;
mod target;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use data::{shard, Dataset, ShardedData};
pub use target::{gaussian_location_posterior, subposterior, Subposterior};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `y ~ N(μ1 + μ2², σ²)` with `σ²` known and `N(0, prior_var)` priors on both means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpedGaussian {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub prior_var: f64,
}

impl Default for WarpedGaussian {
    fn default() -> Self {
        WarpedGaussian { mu1: 0.5, mu2: 0.0, sigma2: 2.0, prior_var: 25.0 }
    }
}

/// Equal-weight mixture of `Gamma(α_j, rate β_j)`; inference on `α` with
/// `Gamma(shape, scale)` priors, sampled as `log α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaMixture {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub prior_shape: f64,
    pub prior_scale: f64,
}

impl Default for GammaMixture {
    fn default() -> Self {
        GammaMixture { alpha: [0.5, 1.0], beta: [1.0, 1.0], prior_shape: 0.5, prior_scale: 1.0 }
    }
}

/// Logistic regression with deterministic labels `y = 1{θ0 + θ·x ≥ 0}`,
/// `x ~ N(0, Σ)`, `Σ_ij = correlation^|i-j|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticRegression {
    pub p: usize,
    pub intercept: f64,
    /// Variance of the true slopes, drawn afresh for every generated dataset.
    pub coef_var: f64,
    pub correlation: f64,
    /// Prior variance of every coefficient.
    pub prior_var: f64,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        LogisticRegression { p: 10, intercept: -3.0, coef_var: 0.25, correlation: 0.9, prior_var: 5.0 }
    }
}

/// Three-outcome categorical with two rare outcomes, Dirichlet prior, sampled
/// in additive-log-ratio coordinates `(log λ1/λ3, log λ2/λ3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RareCategorical {
    /// Expected count of each rare outcome per shard; `λ1 = λ2 = rate · shards / N`.
    pub rare_per_shard: f64,
    /// Number of shards used to set the rare rate. Filled from the experiment's K when absent.
    pub shards: Option<usize>,
    pub prior: [f64; 3],
}

impl Default for RareCategorical {
    fn default() -> Self {
        RareCategorical { rare_per_shard: 2.0, shards: None, prior: [1.0, 1.0, 1.0] }
    }
}

/// `y ~ N(θ, noise_cov)` with `θ ~ N(0, prior_var · I)`: conjugate, with a closed-form posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianLocation {
    pub mean: Vec<f64>,
    pub noise_cov: Vec<Vec<f64>>,
    pub prior_var: f64,
}

impl Default for GaussianLocation {
    fn default() -> Self {
        GaussianLocation { mean: vec![1.0, -1.0], noise_cov: vec![vec![4.0, 1.2], vec![1.2, 1.0]], prior_var: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    WarpedGaussian(WarpedGaussian),
    GammaMixture(GammaMixture),
    LogisticRegression(LogisticRegression),
    RareCategorical(RareCategorical),
    GaussianLocation(GaussianLocation),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::WarpedGaussian(_) => "warped_gaussian",
            ModelSpec::GammaMixture(_) => "gamma_mixture",
            ModelSpec::LogisticRegression(_) => "logistic_regression",
            ModelSpec::RareCategorical(_) => "rare_categorical",
            ModelSpec::GaussianLocation(_) => "gaussian_location",
        }
    }

    /// Dimension of the unconstrained parameter.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::WarpedGaussian(_) | ModelSpec::GammaMixture(_) | ModelSpec::RareCategorical(_) => 2,
            ModelSpec::LogisticRegression(m) => m.p + 1,
            ModelSpec::GaussianLocation(m) => m.mean.len(),
        }
    }

    /// Names of the unconstrained coordinates.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelSpec::WarpedGaussian(_) => vec!["mu1".into(), "mu2".into()],
            ModelSpec::GammaMixture(_) => vec!["log_alpha1".into(), "log_alpha2".into()],
            ModelSpec::LogisticRegression(m) => (0..=m.p).map(|j| format!("theta{j}")).collect(),
            ModelSpec::RareCategorical(_) => vec!["alr1".into(), "alr2".into()],
            ModelSpec::GaussianLocation(m) => (0..m.mean.len()).map(|j| format!("m{j}")).collect(),
        }
    }

    /// Fills experiment-dependent fields (the rare-categorical shard count).
    pub fn resolved(&self, k: usize) -> ModelSpec {
        match self {
            ModelSpec::RareCategorical(m) if m.shards.is_none() => {
                ModelSpec::RareCategorical(RareCategorical { shards: Some(k), ..m.clone() })
            }
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match self {
            ModelSpec::WarpedGaussian(m) => {
                if !positive(m.sigma2) || !positive(m.prior_var) || !m.mu1.is_finite() || !m.mu2.is_finite() {
                    return bad(format!("warped gaussian needs finite means and σ², prior variance > 0: {m:?}"));
                }
            }
            ModelSpec::GammaMixture(m) => {
                if !m.alpha.iter().chain(&m.beta).all(|&x| positive(x))
                    || !positive(m.prior_shape)
                    || !positive(m.prior_scale)
                {
                    return bad(format!("gamma mixture needs positive shapes, rates and prior: {m:?}"));
                }
            }
            ModelSpec::LogisticRegression(m) => {
                if m.p == 0 || !positive(m.prior_var) || !(m.coef_var >= 0.0) || !(m.correlation.abs() < 1.0) {
                    return bad(format!("logistic regression needs p ≥ 1, prior variance > 0, |ρ| < 1: {m:?}"));
                }
            }
            ModelSpec::RareCategorical(m) => {
                if !positive(m.rare_per_shard) || !m.prior.iter().all(|&a| positive(a)) {
                    return bad(format!("rare categorical needs positive rate and Dirichlet prior: {m:?}"));
                }
            }
            ModelSpec::GaussianLocation(m) => {
                let d = m.mean.len();
                if d == 0 || m.noise_cov.len() != d || m.noise_cov.iter().any(|r| r.len() != d) || !positive(m.prior_var) {
                    return bad("gaussian location needs a d-vector mean and a d×d covariance".into());
                }
                if Matrix::from_rows(&m.noise_cov)?.cholesky().is_none() {
                    return bad("gaussian location noise covariance is not positive definite".into());
                }
            }
        }
        Ok(())
    }

    /// Rare-outcome probabilities `(λ1, λ2, λ3)` for a dataset of size `n`.
    pub fn categorical_rates(m: &RareCategorical, n: usize) -> Result<[f64; 3]> {
        let shards = m.shards.ok_or_else(|| Error::Validation("rare categorical needs a shard count".into()))?;
        let rate = m.rare_per_shard * shards as f64 / n as f64;
        if !(2.0 * rate < 1.0) {
            return Err(Error::Validation(format!("rare rate {rate} too large for N = {n}")));
        }
        Ok([rate, rate, 1.0 - 2.0 * rate])
    }

    /// Label-switched modes of the gamma mixture in unconstrained space.
    pub fn gamma_modes_unconstrained(m: &GammaMixture) -> [[f64; 2]; 2] {
        let (a, b) = (m.alpha[0].ln(), m.alpha[1].ln());
        [[a, b], [b, a]]
    }
}

/// Draws `n` i.i.d. observations from the model's generative process.
pub fn generate<R: Rng + ?Sized>(spec: &ModelSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Validation("cannot generate an empty dataset".into()));
    }
    let name = spec.name();
    match spec {
        ModelSpec::WarpedGaussian(m) => {
            let dist = Normal::new(m.mu1 + m.mu2 * m.mu2, m.sigma2.sqrt()).expect("validated");
            let y: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            let mut ds = Dataset::new(Matrix::from_vec(n, 1, y)?, vec!["y".into()], name)?;
            ds.truth = Some(vec![m.mu1, m.mu2]);
            Ok(ds)
        }
        ModelSpec::GammaMixture(m) => {
            let comps = [0, 1].map(|j| Gamma::new(m.alpha[j], 1.0 / m.beta[j]).expect("validated"));
            let y: Vec<f64> = (0..n)
                .map(|_| loop {
                    // Shapes below one put real mass near zero; keep strictly positive draws.
                    let v = comps[usize::from(rng.random::<bool>())].sample(rng);
                    if v > 0.0 {
                        break v;
                    }
                })
                .collect();
            let mut ds = Dataset::new(Matrix::from_vec(n, 1, y)?, vec!["y".into()], name)?;
            ds.truth = Some(vec![m.alpha[0].ln(), m.alpha[1].ln()]);
            Ok(ds)
        }
        ModelSpec::LogisticRegression(m) => {
            let slope = Normal::new(0.0, m.coef_var.sqrt()).expect("validated");
            let theta: Vec<f64> = (0..m.p).map(|_| slope.sample(rng)).collect();
            let rho = m.correlation;
            let innov = (1.0 - rho * rho).sqrt();
            let mut data = Vec::with_capacity(n * (m.p + 1));
            for _ in 0..n {
                // AR(1) construction gives Cov(x_i, x_j) = ρ^|i-j| exactly.
                let mut x = Vec::with_capacity(m.p);
                let mut prev: f64 = rng.sample(StandardNormal);
                x.push(prev);
                for _ in 1..m.p {
                    prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
                    x.push(prev);
                }
                let eta = m.intercept + theta.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                data.extend_from_slice(&x);
                data.push(if eta >= 0.0 { 1.0 } else { 0.0 });
            }
            let mut cols: Vec<String> = (1..=m.p).map(|j| format!("x{j}")).collect();
            cols.push("y".into());
            let mut ds = Dataset::new(Matrix::from_vec(n, m.p + 1, data)?, cols, name)?;
            ds.truth = Some(std::iter::once(m.intercept).chain(theta).collect());
            Ok(ds)
        }
        ModelSpec::RareCategorical(m) => {
            let lambda = ModelSpec::categorical_rates(m, n)?;
            let y: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < lambda[0] {
                        0.0
                    } else if u < lambda[0] + lambda[1] {
                        1.0
                    } else {
                        2.0
                    }
                })
                .collect();
            let mut ds = Dataset::new(Matrix::from_vec(n, 1, y)?, vec!["category".into()], name)?;
            ds.truth = Some(vec![(lambda[0] / lambda[2]).ln(), (lambda[1] / lambda[2]).ln()]);
            Ok(ds)
        }
        ModelSpec::GaussianLocation(m) => {
            let d = m.mean.len();
            let chol = Matrix::from_rows(&m.noise_cov)?.cholesky().expect("validated");
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..d {
                    data.push(m.mean[i] + (0..=i).map(|j| chol.get(i, j) * z[j]).sum::<f64>());
                }
            }
            let cols = (0..d).map(|j| format!("y{j}")).collect();
            let mut ds = Dataset::new(Matrix::from_vec(n, d, data)?, cols, name)?;
            ds.truth = Some(m.mean.clone());
            Ok(ds)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn warped_gaussian_mean_matches_truth() {
        let spec = ModelSpec::WarpedGaussian(WarpedGaussian::default());
        let d = generate(&spec, 10000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mean = d.rows.column_means()[0];
        assert!((mean - 0.5).abs() < 4.0 * (2.0f64 / 10000.0).sqrt());
    }

    #[test]
    fn rare_categorical_counts() {
        let spec = ModelSpec::RareCategorical(RareCategorical::default()).resolved(10);
        let ModelSpec::RareCategorical(m) = &spec else { unreachable!() };
        let lambda = ModelSpec::categorical_rates(m, 10000).unwrap();
        assert!((lambda[0] - 0.002).abs() < 1e-15 && (lambda[0] * 10000.0 - 20.0).abs() < 1e-9);
        // Averaged over repetitions, ≈ 20 of each rare outcome in total.
        let mut total = [0.0f64; 3];
        for seed in 0..20 {
            let d = generate(&spec, 10000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for &c in d.rows.as_slice() {
                total[c as usize] += 1.0 / 20.0;
            }
        }
        assert!((total[0] - 20.0).abs() < 4.0 && (total[1] - 20.0).abs() < 4.0, "{total:?}");
        let unresolved = ModelSpec::RareCategorical(RareCategorical::default());
        assert!(generate(&unresolved, 100, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn logistic_labels_follow_the_rounding_rule() {
        let spec = ModelSpec::LogisticRegression(LogisticRegression { p: 4, ..Default::default() });
        let d = generate(&spec, 500, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d.columns.last().unwrap(), "y");
        let theta = d.truth.clone().unwrap();
        assert_eq!(theta.len(), 5);
        assert_eq!(theta[0], -3.0);
        for row in d.rows.iter_rows() {
            let eta = theta[0] + theta[1..].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            let sigma = 1.0 / (1.0 + (-eta).exp());
            assert_eq!(sigma >= 0.5, row[4] == 1.0, "eta = {eta}");
        }
    }

    #[test]
    fn logistic_covariates_have_ar1_covariance() {
        let spec = ModelSpec::LogisticRegression(LogisticRegression { p: 3, ..Default::default() });
        let d = generate(&spec, 40000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cov = d.rows.select_columns(&[0, 1, 2]).covariance();
        for i in 0..3 {
            for j in 0..3 {
                let want = 0.9f64.powi((i as i32 - j as i32).abs());
                assert!((cov.get(i, j) - want).abs() < 0.05);
            }
        }
    }

    #[test]
    fn gamma_mixture_draws_are_positive_with_right_mean() {
        let spec = ModelSpec::GammaMixture(GammaMixture::default());
        let d = generate(&spec, 20000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(d.rows.as_slice().iter().all(|&y| y > 0.0));
        // E[y] = 0.5·0.5 + 0.5·1.0
        assert!((d.rows.column_means()[0] - 0.75).abs() < 0.03);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = ModelSpec::WarpedGaussian(WarpedGaussian { sigma2: -1.0, ..Default::default() });
        assert!(matches!(generate(&bad, 10, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Validation(_))));
        let bad = ModelSpec::GaussianLocation(GaussianLocation { noise_cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]], ..Default::default() });
        assert!(bad.validate().is_err());
        let bad = ModelSpec::LogisticRegression(LogisticRegression { p: 0, ..Default::default() });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_parses_from_toml_and_rejects_unknown_keys() {
        let spec: ModelSpec = toml::from_str("kind = \"logistic_regression\"\np = 25\n").unwrap();
        assert_eq!(spec, ModelSpec::LogisticRegression(LogisticRegression { p: 25, ..Default::default() }));
        assert!(toml::from_str::<ModelSpec>("kind = \"warped_gaussian\"\nsigma = 2.0\n").is_err());
    }
}
