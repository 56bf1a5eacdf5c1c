use rand::Rng;
use rand_distr::StandardNormal;

use super::{initial_point, run_chains, ChainOutput, McmcConfig, SampleSet, TargetModel};
use crate::error::Result;
use crate::linalg::Matrix;

/// Acceptance rate targeted during warmup.
pub const TARGET_ACCEPTANCE: f64 = 0.234;

/// Random-walk Metropolis with warmup-only adaptation.
///
/// Warmup adapts a global log-scale by Robbins–Monro toward
/// [`TARGET_ACCEPTANCE`], and re-estimates the proposal covariance from the
/// chain's own warmup draws at 30% and 60% of warmup. The proposal is frozen
/// for the sampling phase.
pub fn rwm_sample(target: &dyn TargetModel, cfg: &McmcConfig) -> Result<SampleSet> {
    run_chains(target, cfg, |chain, rng| {
        let (mut x, mut lp) = initial_point(target, cfg.init_radius, chain, rng)?;
        let d = target.dim();
        let base_scale = 2.38 / (d as f64).sqrt();
        let mut log_scale = base_scale.ln();
        let mut chol = Matrix::identity(d);
        let boundaries = [cfg.n_warmup * 3 / 10, cfg.n_warmup * 6 / 10];
        let mut window_start = 0;
        let mut window: Vec<Vec<f64>> = Vec::new();
        let mut adapt_t = 0usize;

        let mut proposal = vec![0.0; d];
        let mut step = |x: &mut Vec<f64>, lp: &mut f64, scale: f64, chol: &Matrix, rng: &mut rand_chacha::ChaCha8Rng| {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..d {
                let row = chol.row(i);
                proposal[i] = x[i] + scale * row[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            }
            let lp_new = target.log_density(&proposal);
            let log_u: f64 = rng.random::<f64>().ln();
            if lp_new.is_finite() && log_u < lp_new - *lp {
                x.copy_from_slice(&proposal);
                *lp = lp_new;
                true
            } else {
                false
            }
        };

        for it in 0..cfg.n_warmup {
            let accepted = step(&mut x, &mut lp, log_scale.exp(), &chol, rng);
            adapt_t += 1;
            let gain = (adapt_t as f64).powf(-0.6);
            log_scale += gain * (f64::from(u8::from(accepted)) - TARGET_ACCEPTANCE);
            window.push(x.clone());
            if boundaries.contains(&(it + 1)) && it + 1 - window_start >= 10 {
                if let Some(c) = regularized_cov(&window).cholesky() {
                    chol = c;
                    log_scale = base_scale.ln();
                    adapt_t = 0;
                }
                window.clear();
                window_start = it + 1;
            }
        }

        let n_draws = cfg.draws_for_chain(chain);
        let scale = log_scale.exp();
        let mut draws = Vec::with_capacity(n_draws);
        let mut accepted = 0usize;
        for _ in 0..n_draws {
            for _ in 0..cfg.thin {
                accepted += usize::from(step(&mut x, &mut lp, scale, &chol, rng));
            }
            draws.push(x.clone());
        }
        Ok(ChainOutput {
            draws,
            acceptance: accepted as f64 / (n_draws * cfg.thin).max(1) as f64,
            step_scale: scale,
            divergences: 0,
        })
    })
}

/// Sample covariance shrunk 10% toward its diagonal, plus a small ridge.
fn regularized_cov(rows: &[Vec<f64>]) -> Matrix {
    let m = Matrix::from_rows(rows).expect("equal-length draws");
    let mut cov = m.covariance();
    let d = cov.rows();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                cov.set(i, j, 0.9 * cov.get(i, j));
            }
        }
        cov.set(i, i, cov.get(i, i) + 1e-10);
    }
    cov
}
