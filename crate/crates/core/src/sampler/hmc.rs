use rand::Rng;
use rand_distr::StandardNormal;

use super::{initial_point, run_chains, Algorithm, ChainOutput, McmcConfig, SampleSet, TargetModel};
use crate::error::{Error, Result};

/// Energy error beyond which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Default mean acceptance probability targeted by warmup step-size adaptation.
pub const ADAPT_ACCEPTANCE: f64 = 0.8;

/// Relative half-width of the uniform step-size jitter applied after adaptation.
pub const STEP_JITTER: f64 = 0.2;

/// Dual-averaging step-size tuner (Nesterov's scheme as used for HMC).
struct DualAveraging {
    target: f64,
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step_size: f64, target: f64) -> Self {
        DualAveraging { target, mu: (10.0 * step_size).ln(), h_bar: 0.0, log_eps_bar: step_size.ln(), t: 0.0 }
    }

    /// Records one transition's acceptance probability; returns the next step size.
    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// HMC with identity mass matrix and Metropolis correction.
///
/// The step size is fixed, or with `adapt_step` tuned during warmup and then
/// frozen; an adapted step is jittered by `±STEP_JITTER` per transition so
/// that trajectories of fixed length cannot resonate with the target (the
/// jitter is state-independent, so detailed balance is kept). The target's gradient is checked against central differences at
/// each chain's starting point. Divergent trajectories are rejected and
/// counted; more than half divergent post-warmup transitions in any chain is
/// an error.
pub fn hmc_sample(target: &dyn TargetModel, cfg: &McmcConfig) -> Result<SampleSet> {
    let Algorithm::Hmc { step_size, leapfrog_steps, adapt_step, target_accept } = cfg.algorithm else {
        return Err(Error::Config("hmc_sample needs an HMC configuration".into()));
    };
    cfg.validate()?;
    run_chains(target, cfg, |chain, rng| {
        let (mut x, mut lp) = initial_point(target, cfg.init_radius, chain, rng)?;
        let mut grad = gradient(target, &x)?;
        check_gradient(target, &x, &grad)?;
        let n_draws = cfg.draws_for_chain(chain);
        let mut draws = Vec::with_capacity(n_draws);
        let (mut accepted, mut divergences) = (0usize, 0usize);
        let mut tuner = adapt_step.then(|| DualAveraging::new(step_size, target_accept));
        let mut eps = step_size;
        for it in 0..cfg.n_warmup + n_draws * cfg.thin {
            let sampling = it >= cfg.n_warmup;
            if sampling && it == cfg.n_warmup {
                if let Some(t) = tuner.take() {
                    eps = t.final_step();
                }
            }
            let step = if sampling && adapt_step { eps * rng.random_range(1.0 - STEP_JITTER..1.0 + STEP_JITTER) } else { eps };
            let (t, accept_prob) = transition(target, &x, lp, &grad, step, leapfrog_steps, rng)?;
            if let Some(tuner) = tuner.as_mut() {
                eps = tuner.update(accept_prob);
            }
            match t {
                Transition::Accept(nx, nlp, ng) => {
                    x = nx;
                    lp = nlp;
                    grad = ng;
                    accepted += usize::from(sampling);
                }
                Transition::Reject => {}
                Transition::Divergent => divergences += usize::from(sampling),
            }
            if sampling && (it - cfg.n_warmup + 1) % cfg.thin == 0 {
                draws.push(x.clone());
            }
        }
        let transitions = n_draws * cfg.thin;
        if 2 * divergences > transitions {
            return Err(Error::Diagnostics(format!(
                "chain {chain}: {divergences} of {transitions} transitions diverged"
            )));
        }
        Ok(ChainOutput { draws, acceptance: accepted as f64 / transitions as f64, step_scale: eps, divergences })
    })
}

enum Transition {
    Accept(Vec<f64>, f64, Vec<f64>),
    Reject,
    Divergent,
}

fn gradient(target: &dyn TargetModel, x: &[f64]) -> Result<Vec<f64>> {
    target
        .grad_log_density(x)
        .ok_or_else(|| Error::Config(format!("target `{}` provides no gradient", target.label())))
}

fn check_gradient(target: &dyn TargetModel, x: &[f64], grad: &[f64]) -> Result<()> {
    let h = 1e-5;
    for i in 0..x.len() {
        let mut up = x.to_vec();
        up[i] += h;
        let mut down = x.to_vec();
        down[i] -= h;
        let fd = (target.log_density(&up) - target.log_density(&down)) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0);
        if !(err < 1e-4) {
            return Err(Error::Diagnostics(format!(
                "gradient check failed for component {i}: analytic {} vs finite difference {fd}",
                grad[i]
            )));
        }
    }
    Ok(())
}

/// `(position, momentum, log density, gradient)` after `steps` leapfrog steps.
pub(crate) fn leapfrog(
    target: &dyn TargetModel,
    x: &[f64],
    p: &[f64],
    grad: &[f64],
    step_size: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let mut x = x.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    for (pi, gi) in p.iter_mut().zip(&g) {
        *pi += 0.5 * step_size * gi;
    }
    for s in 0..steps {
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += step_size * pi;
        }
        g = gradient(target, &x)?;
        let w = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += w * step_size * gi;
        }
    }
    let lp = target.log_density(&x);
    Ok((x, p, lp, g))
}

fn transition<R: Rng>(
    target: &dyn TargetModel,
    x: &[f64],
    lp: f64,
    grad: &[f64],
    step_size: f64,
    steps: usize,
    rng: &mut R,
) -> Result<(Transition, f64)> {
    let p: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let h0 = -lp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let (nx, np, nlp, ng) = leapfrog(target, x, &p, grad, step_size, steps)?;
    let h1 = -nlp + 0.5 * np.iter().map(|v| v * v).sum::<f64>();
    let log_u: f64 = rng.random::<f64>().ln();
    if !h1.is_finite() || h1 - h0 > DIVERGENCE_THRESHOLD || ng.iter().any(|g| !g.is_finite()) {
        return Ok((Transition::Divergent, 0.0));
    }
    let accept_prob = (h0 - h1).exp().min(1.0);
    Ok((if log_u < h0 - h1 { Transition::Accept(nx, nlp, ng) } else { Transition::Reject }, accept_prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::test_targets::DiagNormal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hmc(step_size: f64, leapfrog_steps: usize, n: usize, seed: u64) -> McmcConfig {
        McmcConfig::new(n, 4, Algorithm::Hmc { step_size, leapfrog_steps, adapt_step: false, target_accept: ADAPT_ACCEPTANCE }, seed)
    }

    #[test]
    fn standard_normal_moments_and_acceptance() {
        let target = DiagNormal { mean: vec![0.0, 0.0], sd: vec![1.0, 1.0] };
        let s = hmc_sample(&target, &hmc(0.1, 20, 20000, 1)).unwrap();
        for a in &s.diagnostics.acceptance {
            assert!(*a > 0.6);
        }
        for m in s.values.column_means() {
            assert!(m.abs() < 0.05);
        }
        let cov = s.values.covariance();
        assert!((cov.get(0, 0) - 1.0).abs() < 0.1 && (cov.get(1, 1) - 1.0).abs() < 0.1);
        assert!(cov.get(0, 1).abs() < 0.1);
    }

    #[test]
    fn zero_leapfrog_steps_is_a_config_error() {
        let target = DiagNormal { mean: vec![0.0], sd: vec![1.0] };
        assert!(matches!(hmc_sample(&target, &hmc(0.1, 0, 100, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn energy_is_nearly_conserved_for_small_steps() {
        let target = DiagNormal { mean: vec![1.0, -1.0, 0.5], sd: vec![1.0, 2.0, 0.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let g = target.grad_log_density(&x).unwrap();
            let h0 = -target.log_density(&x) + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
            let (_, np, nlp, _) = leapfrog(&target, &x, &p, &g, 0.01, 100).unwrap();
            let h1 = -nlp + 0.5 * np.iter().map(|v| v * v).sum::<f64>();
            assert!((h1 - h0).abs() < 0.01);
        }
    }

    struct WrongGradient;
    impl TargetModel for WrongGradient {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(vec![x[0] + 1.0])
        }
        fn label(&self) -> &str {
            "wrong"
        }
    }

    #[test]
    fn bad_gradient_fails_the_check() {
        assert!(matches!(hmc_sample(&WrongGradient, &hmc(0.1, 5, 100, 0)), Err(Error::Diagnostics(_))));
    }

    #[test]
    fn huge_steps_diverge_and_error() {
        let target = DiagNormal { mean: vec![0.0, 0.0], sd: vec![0.01, 0.01] };
        let err = hmc_sample(&target, &hmc(5.0, 10, 400, 0)).unwrap_err();
        assert!(matches!(err, Error::Diagnostics(_)), "{err}");
    }

    #[test]
    fn adaptation_finds_a_workable_step_for_a_narrow_target() {
        let target = DiagNormal { mean: vec![3.0, -1.0], sd: vec![0.02, 0.05] };
        let cfg = McmcConfig::new(4000, 2, Algorithm::Hmc { step_size: 1.0, leapfrog_steps: 10, adapt_step: true, target_accept: ADAPT_ACCEPTANCE }, 5);
        let s = hmc_sample(&target, &cfg).unwrap();
        for (a, eps) in s.diagnostics.acceptance.iter().zip(&s.diagnostics.step_scales) {
            assert!(*a > 0.6 && *a < 0.97, "acceptance {a}");
            assert!(*eps < 0.04, "step {eps}");
        }
        let m = s.values.column_means();
        assert!((m[0] - 3.0).abs() < 0.005 && (m[1] + 1.0).abs() < 0.01);
        let sd = s.values.covariance().get(0, 0).sqrt();
        assert!((sd / 0.02 - 1.0).abs() < 0.1, "{sd}");
    }
}
