use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{FlowArch, FlowModel, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{AdamState, Matrix};

/// Iterations between full-data NLL evaluations.
const CHECKPOINT_EVERY: usize = 100;

/// Maximum-likelihood training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Capped at the number of training rows.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 1000, learning_rate: 1e-4, batch_size: 512, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// Training-set mean NLL at iteration 0, every 100 iterations and at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub checkpoints: Vec<(usize, f64)>,
    /// Iteration whose parameters were returned.
    pub selected_iteration: usize,
}

impl FitReport {
    pub fn initial_nll(&self) -> f64 {
        self.checkpoints[0].1
    }

    pub fn selected_nll(&self) -> f64 {
        self.checkpoints.iter().find(|(i, _)| *i == self.selected_iteration).map(|c| c.1).unwrap()
    }
}

pub fn fit(samples: &Matrix, arch: &FlowArch, cfg: &TrainConfig) -> Result<FlowModel> {
    fit_with_report(samples, arch, cfg).map(|(m, _)| m)
}

/// Fits a flow by mini-batch ADAM on the mean negative log-likelihood.
///
/// The standardizer is computed from `samples` and frozen first. The model
/// returned is the checkpoint with the lowest training NLL, so it is never
/// worse than the initial near-identity flow.
pub fn fit_with_report(samples: &Matrix, arch: &FlowArch, cfg: &TrainConfig) -> Result<(FlowModel, FitReport)> {
    cfg.validate()?;
    let dim = samples.cols();
    if dim < 2 {
        return Err(Error::UnsupportedDimension { dim });
    }
    if samples.rows() < 2 {
        return Err(Error::Validation(format!("need at least 2 training rows, got {}", samples.rows())));
    }
    if !samples.is_finite() {
        return Err(Error::Validation("training samples contain non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let standardizer = Standardizer::from_samples(samples)?;
    let mut model = FlowModel::new(dim, arch, standardizer, &mut rng)?;
    let mut adam = AdamState::new(&model.param_lens(), cfg.learning_rate);

    let n = samples.rows();
    let batch_size = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let initial = model.mean_nll(samples);
    if !initial.is_finite() {
        return Err(Error::Training { iteration: 0, message: format!("initial NLL is {initial}") });
    }
    let mut checkpoints = vec![(0, initial)];
    let mut best = (0, initial, model.clone());

    for it in 1..=cfg.iterations {
        if cursor + batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = samples.select_rows(&order[cursor..cursor + batch_size]);
        cursor += batch_size;

        let (loss, grads) = model.nll_and_gradient(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Training { iteration: it, message: format!("loss is {loss}") });
        }
        let grad_slices = grads.slices();
        adam.step(&mut model.param_slices_mut(), &grad_slices).map_err(|e| match e {
            Error::Training { message, .. } => Error::Training { iteration: it, message },
            other => other,
        })?;

        if it % CHECKPOINT_EVERY == 0 || it == cfg.iterations {
            let nll = model.mean_nll(samples);
            if !nll.is_finite() {
                return Err(Error::Training { iteration: it, message: format!("training-set NLL is {nll}") });
            }
            checkpoints.push((it, nll));
            if nll < best.1 {
                best = (it, nll, model.clone());
            }
        }
    }
    log::debug!("flow fit: NLL {initial:.4} -> {:.4} (iteration {})", best.1, best.0);
    Ok((best.2, FitReport { checkpoints, selected_iteration: best.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_samples(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let cfg = TrainConfig { iterations: 1, ..Default::default() };
        let one_d = Matrix::zeros(10, 1);
        assert!(matches!(fit(&one_d, &FlowArch::default(), &cfg), Err(Error::UnsupportedDimension { dim: 1 })));
        let one_row = Matrix::zeros(1, 2);
        assert!(matches!(fit(&one_row, &FlowArch::default(), &cfg), Err(Error::Validation(_))));
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(fit(&gaussian_samples(10, 0), &FlowArch::default(), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn standard_normal_fit_reaches_entropy() {
        let x = gaussian_samples(4000, 1);
        let cfg = TrainConfig { iterations: 300, learning_rate: 1e-3, batch_size: 256, seed: 2 };
        let (model, report) = fit_with_report(&x, &FlowArch::new(3, vec![32, 32]), &cfg).unwrap();
        // Entropy of N(0, I_2) is log(2π) + 1.
        let entropy = (2.0 * std::f64::consts::PI).ln() + 1.0;
        assert!((model.mean_nll(&x) - entropy).abs() < 0.1);
        assert!(report.selected_nll() <= report.initial_nll());
    }

    #[test]
    fn training_is_deterministic() {
        let x = gaussian_samples(300, 3);
        let cfg = TrainConfig { iterations: 20, learning_rate: 1e-3, batch_size: 64, seed: 4 };
        let arch = FlowArch::new(2, vec![8]);
        assert_eq!(fit(&x, &arch, &cfg).unwrap(), fit(&x, &arch, &cfg).unwrap());
    }
}
