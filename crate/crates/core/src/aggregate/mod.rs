//! Combining subposterior approximations: NAP importance weighting and
//! sampling-importance-resampling, plus the consensus and parametric baselines.

mod baselines;
pub(crate) mod gaussian;
mod nap;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

pub use baselines::{consensus_merge, parametric_merge, Merged, ParametricMerge};
pub use gaussian::{inverse_with_ridge, GaussianSummary, RIDGE};
pub use nap::{nap_log_weights, nap_sir, InstallmentReport, NapMode, NapSirOutput, WeightedSamples, WEIGHT_ESS_WARNING};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::linalg::Matrix;

/// A normalized density with a finite, known upper bound on its log density.
pub trait BoundedDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_prob(&self, theta: &[f64]) -> f64;

    fn log_prob_batch(&self, thetas: &Matrix) -> Vec<f64> {
        thetas.iter_rows().map(|r| self.log_prob(r)).collect()
    }

    /// `sup_θ log p(θ)`; every `log_prob` value must be `≤` this, exactly.
    fn log_prob_upper_bound(&self) -> f64;

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Matrix;
}

impl BoundedDensity for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn log_prob(&self, theta: &[f64]) -> f64 {
        FlowModel::log_prob(self, theta)
    }

    fn log_prob_batch(&self, thetas: &Matrix) -> Vec<f64> {
        FlowModel::log_prob_batch(self, thetas)
    }

    fn log_prob_upper_bound(&self) -> f64 {
        FlowModel::log_prob_upper_bound(self)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Matrix {
        FlowModel::sample(self, n, rng)
    }
}

/// Independent normals `N(mean_d, sd_d²)`: the exact-density stand-in for a flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    sd: Vec<f64>,
    log_max: f64,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != sd.len() {
            return Err(Error::shape(format!("mean has {} entries, sd has {}", mean.len(), sd.len())));
        }
        if !sd.iter().all(|s| *s > 0.0 && s.is_finite()) || !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::Validation("diagonal gaussian needs finite mean and positive sd".into()));
        }
        let log_max = -0.5 * mean.len() as f64 * (2.0 * std::f64::consts::PI).ln() - sd.iter().map(|s| s.ln()).sum::<f64>();
        Ok(DiagonalGaussian { mean, sd, log_max })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }
}

impl BoundedDensity for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_prob(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.mean.len(), "log_prob input dimension");
        let q: f64 = theta.iter().zip(&self.mean).zip(&self.sd).map(|((x, m), s)| ((x - m) / s).powi(2)).sum();
        self.log_max - 0.5 * q
    }

    fn log_prob_upper_bound(&self) -> f64 {
        self.log_max
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Matrix {
        let d = self.mean.len();
        let data = (0..n * d)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                self.mean[i % d] + self.sd[i % d] * z
            })
            .collect();
        Matrix::from_vec(n, d, data).expect("sized above")
    }
}

/// The `K` subposterior approximations `p̂_1, ..., p̂_K` held by the aggregating server.
pub struct SubposteriorEnsemble {
    members: Vec<Box<dyn BoundedDensity>>,
    labels: Vec<String>,
    ingested_bytes: usize,
}

impl std::fmt::Debug for SubposteriorEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubposteriorEnsemble")
            .field("k", &self.members.len())
            .field("dim", &self.dim())
            .field("labels", &self.labels)
            .field("ingested_bytes", &self.ingested_bytes)
            .finish()
    }
}

impl SubposteriorEnsemble {
    pub fn new(members: Vec<Box<dyn BoundedDensity>>, labels: Vec<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("ensemble needs at least one member".into()));
        }
        if labels.len() != members.len() {
            return Err(Error::shape(format!("{} labels for {} members", labels.len(), members.len())));
        }
        let d = members[0].dim();
        if let Some(bad) = members.iter().position(|m| m.dim() != d) {
            return Err(Error::shape(format!("member {bad} has dimension {}, expected {d}", members[bad].dim())));
        }
        Ok(SubposteriorEnsemble { members, labels, ingested_bytes: 0 })
    }

    /// Deserializes one flow per blob, recording the bytes received.
    pub fn from_blobs<B: AsRef<[u8]>>(blobs: &[B]) -> Result<Self> {
        let mut members: Vec<Box<dyn BoundedDensity>> = Vec::with_capacity(blobs.len());
        let mut bytes = 0;
        for blob in blobs {
            bytes += blob.as_ref().len();
            members.push(Box::new(FlowModel::from_bytes(blob.as_ref())?));
        }
        let labels = (0..blobs.len()).map(|k| format!("shard {k}")).collect();
        let mut ens = Self::new(members, labels)?;
        ens.ingested_bytes = bytes;
        Ok(ens)
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn member(&self, k: usize) -> &dyn BoundedDensity {
        self.members[k].as_ref()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Total serialized bytes ingested through [`SubposteriorEnsemble::from_blobs`] (0 otherwise).
    pub fn ingested_bytes(&self) -> usize {
        self.ingested_bytes
    }

    /// `log M_k = Σ_{k'≠k} sup log p̂_{k'}`, summed in member order.
    pub fn log_weight_bound(&self, proposal: usize) -> f64 {
        let mut acc = 0.0;
        for (j, m) in self.members.iter().enumerate() {
            if j != proposal {
                acc += m.log_prob_upper_bound();
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowArch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_gaussian_density_and_bound() {
        let g = DiagonalGaussian::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        // log φ(0) + log(φ(0.5)/2)
        let want = -(2.0 * std::f64::consts::PI).ln() - 2f64.ln() - 0.125;
        assert!((g.log_prob(&[0.0, 2.0]) - want).abs() < 1e-14);
        assert!(g.log_prob(&[0.0, 1.0]) <= g.log_prob_upper_bound());
        assert_eq!(g.log_prob(&[0.0, 1.0]), g.log_prob_upper_bound());
        let s = g.sample(20000, &mut ChaCha8Rng::seed_from_u64(0));
        let m = s.column_means();
        assert!((m[1] - 1.0).abs() < 0.06 && (s.covariance().get(1, 1) - 4.0).abs() < 0.2);
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn ensemble_rejects_mixed_dimensions() {
        let a: Box<dyn BoundedDensity> = Box::new(DiagonalGaussian::new(vec![0.0; 2], vec![1.0; 2]).unwrap());
        let b: Box<dyn BoundedDensity> = Box::new(DiagonalGaussian::new(vec![0.0; 3], vec![1.0; 3]).unwrap());
        assert!(SubposteriorEnsemble::new(vec![a, b], vec!["a".into(), "b".into()]).is_err());
        assert!(SubposteriorEnsemble::new(vec![], vec![]).is_err());
    }

    #[test]
    fn blobs_are_counted_on_ingestion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = FlowArch::new(2, vec![4]);
        let flows: Vec<FlowModel> = (0..3)
            .map(|_| FlowModel::new(2, &arch, crate::flow::Standardizer::identity(2), &mut rng).unwrap())
            .collect();
        let blobs: Vec<Vec<u8>> = flows.iter().map(|f| f.to_bytes()).collect();
        let ens = SubposteriorEnsemble::from_blobs(&blobs).unwrap();
        assert_eq!(ens.ingested_bytes(), blobs.iter().map(Vec::len).sum::<usize>());
        assert_eq!(ens.k(), 3);
        let x = [0.3, -0.2];
        assert_eq!(ens.member(1).log_prob(&x), flows[1].log_prob(&x));
        assert_eq!(ens.log_weight_bound(0), flows[1].log_prob_upper_bound() + flows[2].log_prob_upper_bound());
    }
}
