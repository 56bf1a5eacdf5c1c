use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::coupling::{alternating_masks, CouplingLayer, CouplingTape};
use crate::error::{Error, Result};
use crate::linalg::{Gradients, Matrix};

/// Floor applied to per-dimension standard deviations.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Frozen diagonal affine map `x ↦ (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::shape("standardizer shift and scale lengths differ"));
        }
        if shift.iter().any(|x| !x.is_finite()) || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation("standardizer needs finite shift and positive finite scale".into()));
        }
        Ok(Standardizer { shift, scale })
    }

    /// Per-column sample mean and (n-1) standard deviation, floored at [`SCALE_FLOOR`].
    pub fn from_samples(samples: &Matrix) -> Result<Self> {
        if samples.rows() < 2 {
            return Err(Error::Validation(format!("need at least 2 samples, got {}", samples.rows())));
        }
        let shift = samples.column_means();
        let cov = samples.covariance();
        let scale = (0..samples.cols())
            .map(|d| {
                let sd = cov.get(d, d).sqrt();
                if sd < SCALE_FLOOR {
                    log::warn!("dimension {d} is constant in the training samples; scale floored");
                }
                sd.max(SCALE_FLOOR)
            })
            .collect();
        Standardizer::new(shift, scale)
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// `Σ_d log(1 / scale_d)`, the log-Jacobian of standardization.
    pub fn log_det(&self) -> f64 {
        self.scale.iter().map(|s| -s.ln()).sum()
    }

    fn standardize_rows(&self, m: &mut Matrix) {
        let d = self.shift.len();
        for row in m.as_mut_slice().chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
    }

    fn unstandardize_rows(&self, m: &mut Matrix) {
        let d = self.shift.len();
        for row in m.as_mut_slice().chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *x = *x * s + m;
            }
        }
    }
}

/// Latent density `p_Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseDensity {
    StandardNormal,
}

impl BaseDensity {
    /// `log max_z p_Z(z)`.
    pub fn log_max(self, dim: usize) -> f64 {
        match self {
            BaseDensity::StandardNormal => -0.5 * dim as f64 * (2.0 * PI).ln(),
        }
    }

    /// Written as `log_max - (nonnegative term)` so that the result never exceeds `log_max`.
    fn log_density(self, z: &[f64]) -> f64 {
        match self {
            BaseDensity::StandardNormal => self.log_max(z.len()) - 0.5 * z.iter().map(|x| x * x).sum::<f64>(),
        }
    }
}

/// Number of coupling layers and hidden widths of every scale/translate network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowArch {
    pub n_layers: usize,
    pub hidden: Vec<usize>,
}

impl Default for FlowArch {
    /// Three couplings, two hidden layers of 256 units.
    fn default() -> Self {
        FlowArch { n_layers: 3, hidden: vec![256, 256] }
    }
}

impl FlowArch {
    pub fn new(n_layers: usize, hidden: Vec<usize>) -> Self {
        FlowArch { n_layers, hidden }
    }
}

/// Real NVP density over `ℝ^D`.
///
/// `layers[0]` is `g_1`, the first map applied when sampling and the last one
/// inverted when evaluating densities.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    layers: Vec<CouplingLayer>,
    standardizer: Standardizer,
    base: BaseDensity,
}

/// Per-layer `(scale, translate)` parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradients {
    pub layers: Vec<(Gradients, Gradients)>,
}

impl FlowGradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|(s, t)| s.slices().into_iter().chain(t.slices())).collect()
    }
}

impl FlowModel {
    /// Randomly initialized flow with alternating even/odd masks.
    pub fn new<R: Rng + ?Sized>(dim: usize, arch: &FlowArch, standardizer: Standardizer, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::UnsupportedDimension { dim });
        }
        if arch.n_layers == 0 {
            return Err(Error::Config("a flow needs at least one coupling layer".into()));
        }
        let layers = alternating_masks(dim, arch.n_layers)
            .into_iter()
            .map(|mask| CouplingLayer::new(dim, mask, &arch.hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        FlowModel::from_parts(layers, standardizer)
    }

    pub fn from_parts(layers: Vec<CouplingLayer>, standardizer: Standardizer) -> Result<Self> {
        let dim = layers.first().ok_or_else(|| Error::Config("a flow needs at least one coupling layer".into()))?.dim();
        if dim < 2 {
            return Err(Error::UnsupportedDimension { dim });
        }
        if layers.iter().any(|l| l.dim() != dim) || standardizer.shift().len() != dim {
            return Err(Error::shape("layers and standardizer disagree on dimension"));
        }
        Ok(FlowModel { dim, layers, standardizer, base: BaseDensity::StandardNormal })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn base(&self) -> BaseDensity {
        self.base
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.scale_net().n_params() + l.translate_net().n_params()).sum()
    }

    /// `log p̂(θ)` by the change-of-variable formula.
    ///
    /// # Panics
    /// If `theta.len() != self.dim()`.
    pub fn log_prob(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim, "log_prob input dimension");
        let mut v: Vec<f64> = theta
            .iter()
            .zip(self.standardizer.shift())
            .zip(self.standardizer.scale())
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        let mut log_dets = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter().rev() {
            let (next, ld) = layer.inverse_f(&v).expect("dimension checked above");
            v = next;
            log_dets.push(ld);
        }
        self.accumulate(self.base.log_density(&v), &log_dets)
    }

    /// `log_prob` for every row of `thetas`.
    pub fn log_prob_batch(&self, thetas: &Matrix) -> Vec<f64> {
        assert_eq!(thetas.cols(), self.dim, "log_prob_batch input dimension");
        let n = thetas.rows();
        let mut v = thetas.clone();
        self.standardizer.standardize_rows(&mut v);
        let mut per_layer = vec![vec![0.0; n]; self.layers.len()];
        for (layer, ld) in self.layers.iter().rev().zip(per_layer.iter_mut()) {
            layer.inverse_f_batch(&mut v, ld).expect("dimension checked above");
        }
        (0..n)
            .map(|r| {
                let lds: Vec<f64> = per_layer.iter().map(|l| l[r]).collect();
                self.accumulate(self.base.log_density(v.row(r)), &lds)
            })
            .collect()
    }

    /// Sums in the same order as [`FlowModel::log_prob_upper_bound`], which
    /// makes `log_prob ≤ bound` hold exactly in floating point: each term is
    /// bounded by its counterpart and rounding is monotone.
    fn accumulate(&self, base: f64, log_dets: &[f64]) -> f64 {
        let mut acc = base;
        for ld in log_dets {
            acc += ld;
        }
        acc + self.standardizer.log_det()
    }

    /// Upper bound on `log p̂`: `log max p_Z + Σ_l |Ī_l| + Σ_d log(1/scale_d)`.
    pub fn log_prob_upper_bound(&self) -> f64 {
        let caps: Vec<f64> = self.layers.iter().rev().map(|l| l.transformed_indices().len() as f64).collect();
        self.accumulate(self.base.log_max(self.dim), &caps)
    }

    /// `n` draws: `z ~ p_Z`, then `g_1, ..., g_L`, then un-standardize.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let data = (0..n * self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut v = Matrix::from_vec(n, self.dim, data).expect("sized above");
        for layer in &self.layers {
            layer.forward_g_batch(&mut v).expect("dimension fixed");
        }
        self.standardizer.unstandardize_rows(&mut v);
        v
    }

    /// Mutable parameter slices: per layer, scale net then translate net.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let (s, t) = l.nets_mut();
                let mut v = s.param_slices_mut();
                v.extend(t.param_slices_mut());
                v
            })
            .collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut copy = self.clone();
        copy.param_slices_mut().iter().map(|s| s.len()).collect()
    }

    /// Mean negative log-likelihood of the rows of `batch`.
    pub fn mean_nll(&self, batch: &Matrix) -> f64 {
        let lp = self.log_prob_batch(batch);
        -lp.iter().sum::<f64>() / lp.len() as f64
    }

    /// Mean NLL over `batch` and its gradient with respect to every network parameter.
    pub fn nll_and_gradient(&self, batch: &Matrix) -> Result<(f64, FlowGradients)> {
        if batch.cols() != self.dim || batch.rows() == 0 {
            return Err(Error::shape(format!("batch is {}x{}, flow dim {}", batch.rows(), batch.cols(), self.dim)));
        }
        let n = batch.rows();
        let inv_n = 1.0 / n as f64;
        let mut v = batch.clone();
        self.standardizer.standardize_rows(&mut v);
        let mut log_det = vec![0.0; n];
        // Tapes in application order: layers L, L-1, ..., 1.
        let mut tapes: Vec<CouplingTape> = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter().rev() {
            tapes.push(layer.inverse_f_batch_taped(&mut v, &mut log_det)?);
        }
        let nll = -(0..n)
            .map(|r| self.base.log_density(v.row(r)) + log_det[r] + self.standardizer.log_det())
            .sum::<f64>()
            * inv_n;

        // d(mean NLL)/dz = z / n for a standard normal base.
        let mut upstream = v;
        upstream.as_mut_slice().iter_mut().for_each(|x| *x *= inv_n);
        let mut grads: Vec<(Gradients, Gradients)> = self
            .layers
            .iter()
            .map(|l| (Gradients::zeros_like(l.scale_net()), Gradients::zeros_like(l.translate_net())))
            .collect();
        for (li, tape) in (0..self.layers.len()).zip(tapes.iter().rev()) {
            let layer = &self.layers[li];
            let tr = layer.transformed_indices();
            let id = layer.identity_indices();
            let s = tape.scale_tape.output();
            let mut ds = Matrix::zeros(n, tr.len());
            let mut dt = Matrix::zeros(n, tr.len());
            for r in 0..n {
                let up = upstream.row(r).to_vec();
                let (s_row, x_row) = (s.row(r), tape.transformed_in.row(r));
                let out = upstream.row_mut(r);
                for (j, &idx) in tr.iter().enumerate() {
                    let e = s_row[j].exp();
                    ds.set(r, j, up[idx] * x_row[j] * e - inv_n);
                    dt.set(r, j, up[idx]);
                    out[idx] = up[idx] * e;
                }
            }
            let (gs, gt) = &mut grads[li];
            let dcond_s = layer.scale_net().backward_batch(&tape.scale_tape, &ds, gs)?;
            let dcond_t = layer.translate_net().backward_batch(&tape.translate_tape, &dt, gt)?;
            for r in 0..n {
                let (a, b) = (dcond_s.row(r), dcond_t.row(r));
                let out = upstream.row_mut(r);
                for (j, &idx) in id.iter().enumerate() {
                    out[idx] += a[j] + b[j];
                }
            }
        }
        Ok((nll, FlowGradients { layers: grads }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_flow(dim: usize, n_layers: usize) -> FlowModel {
        let layers = alternating_masks(dim, n_layers)
            .into_iter()
            .map(|mask| {
                let (a, b) = (mask.len(), dim - mask.len());
                CouplingLayer::from_parts(
                    dim,
                    mask,
                    Mlp::zeros(&[a, 4, b], Activation::Tanh).unwrap(),
                    Mlp::zeros(&[a, 4, b], Activation::Identity).unwrap(),
                )
                .unwrap()
            })
            .collect();
        FlowModel::from_parts(layers, Standardizer::identity(dim)).unwrap()
    }

    fn random_flow(dim: usize, width: usize, seed: u64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Standardizer::new(
            (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..dim).map(|_| rng.random_range(0.2..3.0)).collect(),
        )
        .unwrap();
        let mut flow = FlowModel::new(dim, &FlowArch::new(3, vec![width, width]), std, &mut rng).unwrap();
        for layer in &mut flow.layers {
            let (s, t) = layer.nets_mut();
            s.scale_output_layer(100.0);
            t.scale_output_layer(100.0);
        }
        flow
    }

    #[test]
    fn identity_flow_is_standard_normal() {
        let flow = zero_flow(2, 1);
        assert!((flow.log_prob(&[0.0, 0.0]) + (2.0 * PI).ln()).abs() < 1e-15);
        assert!((flow.log_prob(&[0.0, 0.0]) - -1.837877).abs() < 1e-6);
    }

    #[test]
    fn upper_bound_formula() {
        assert!((zero_flow(2, 1).log_prob_upper_bound() - (-(2.0 * PI).ln() + 1.0)).abs() < 1e-15);
        assert!((zero_flow(2, 3).log_prob_upper_bound() - (-(2.0 * PI).ln() + 3.0)).abs() < 1e-15);
        let std = Standardizer::new(vec![0.0, 0.0], vec![2.0, 0.5]).unwrap();
        let flow = FlowModel::from_parts(zero_flow(2, 3).layers, std).unwrap();
        // log(1/2) + log(2) = 0
        assert!((flow.log_prob_upper_bound() - (-(2.0 * PI).ln() + 3.0)).abs() < 1e-15);
        assert!(random_flow(7, 8, 1).log_prob_upper_bound().is_finite());
    }

    #[test]
    fn one_dimensional_flow_is_unsupported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = FlowModel::new(1, &FlowArch::default(), Standardizer::identity(1), &mut rng).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDimension { dim: 1 }));
    }

    #[test]
    fn log_prob_never_exceeds_bound() {
        for seed in 0..5 {
            let flow = random_flow(4, 16, seed);
            let bound = flow.log_prob_upper_bound();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let pts = Matrix::from_vec(20000, 4, (0..80000).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
            let lp = flow.log_prob_batch(&pts);
            assert!(lp.iter().all(|&x| x <= bound && x.is_finite()));
            // Near the mode too.
            let near = flow.sample(2000, &mut rng);
            assert!(flow.log_prob_batch(&near).iter().all(|&x| x <= bound));
        }
    }

    #[test]
    fn batch_and_single_log_prob_agree() {
        let flow = random_flow(3, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = flow.sample(50, &mut rng);
        let batch = flow.log_prob_batch(&pts);
        for (r, lp) in batch.iter().enumerate() {
            assert!((lp - flow.log_prob(pts.row(r))).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_flow_samples_are_standard_normal() {
        let flow = zero_flow(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20000;
        let s = flow.sample(n, &mut rng);
        for m in s.column_means() {
            assert!(m.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_log_prob_finite() {
        let flow = random_flow(5, 8, 2);
        let a = flow.sample(300, &mut ChaCha8Rng::seed_from_u64(1));
        let b = flow.sample(300, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(flow.log_prob_batch(&a).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut flow = random_flow(3, 8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = flow.sample(16, &mut rng);
        let (nll, grads) = flow.nll_and_gradient(&batch).unwrap();
        assert!((nll - flow.mean_nll(&batch)).abs() < 1e-12);
        let analytic = grads.slices().concat();
        let h = 1e-5;
        let mut idx = 0;
        let n_slices = flow.param_slices_mut().len();
        let mut worst: f64 = 0.0;
        for s in 0..n_slices {
            for j in 0..flow.param_slices_mut()[s].len() {
                let orig = flow.param_slices_mut()[s][j];
                flow.param_slices_mut()[s][j] = orig + h;
                let up = flow.mean_nll(&batch);
                flow.param_slices_mut()[s][j] = orig - h;
                let down = flow.mean_nll(&batch);
                flow.param_slices_mut()[s][j] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (analytic[idx] - fd).abs() / analytic[idx].abs().max(fd.abs()).max(1e-4);
                worst = worst.max(err);
                idx += 1;
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]

        #[test]
        fn log_prob_is_finite_and_bounded(
            seed in 0u64..1000,
            theta in proptest::collection::vec(-1e3f64..1e3, 3),
        ) {
            let flow = random_flow(3, 8, seed);
            let lp = flow.log_prob(&theta);
            proptest::prop_assert!(lp.is_finite());
            proptest::prop_assert!(lp <= flow.log_prob_upper_bound());
        }
    }
}
