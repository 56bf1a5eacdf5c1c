use crate::error::{Error, Result};

/// ADAM moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Moments for tensors of the given lengths, with the usual defaults
    /// `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(param_lens: &[usize], learning_rate: f64) -> Self {
        AdamState {
            first_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// One bias-corrected update. Fails before touching anything if a gradient
    /// is non-finite; the error carries the index of the step that failed.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::shape(format!("tensor {i} length changed")));
            }
        }
        let iteration = self.step_count + 1;
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Training { iteration, message: "non-finite gradient".into() });
        }
        self.step_count = iteration;
        let t = iteration as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first_moment).zip(&mut self.second_moment) {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut adam = AdamState::new(&[3], 1e-3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_scalar_hand_computation() {
        // m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g² → Δ = -lr g / (|g| + eps)
        let (lr, g) = (1e-2, 0.5);
        let mut adam = AdamState::new(&[1], lr);
        let mut p = vec![2.0];
        adam.step(&mut [&mut p], &[&[g]]).unwrap();
        let want = 2.0 - lr * g / (g + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
        // Second step with the same gradient: m̂ = g, v̂ = g² again.
        adam.step(&mut [&mut p], &[&[g]]).unwrap();
        assert!((p[0] - (want - lr * g / (g + 1e-8))).abs() < 1e-14);
    }

    #[test]
    fn two_steps_on_quadratic_reduce_loss() {
        let mut adam = AdamState::new(&[1], 0.1);
        let mut x = vec![1.5];
        let f = |x: f64| x * x;
        let f0 = f(x[0]);
        for _ in 0..2 {
            let g = 2.0 * x[0];
            adam.step(&mut [&mut x], &[&[g]]).unwrap();
        }
        assert!(f(x[0]) < f0);
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let mut adam = AdamState::new(&[2], 1e-3);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let err = adam.step(&mut [&mut p], &[&[f64::NAN, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::Training { iteration: 2, .. }));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut adam = AdamState::new(&[2], 1e-3);
        let mut p = vec![0.0; 3];
        assert!(matches!(adam.step(&mut [&mut p], &[&[0.0; 3]]), Err(Error::Shape(_))));
    }
}
