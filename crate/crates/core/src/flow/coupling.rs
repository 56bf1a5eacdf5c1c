use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Activation, Matrix, Mlp, MlpTape};

/// Initial gain on the last layer of the scale and translation networks, so
/// that a freshly initialized layer is close to the identity map.
const INIT_OUTPUT_GAIN: f64 = 0.01;

/// Affine coupling bijection.
///
/// In the density direction (`f`), coordinates in `identity` pass through
/// and the rest become `v · exp(s(v_I)) + t(v_I)`. The scale network ends
/// in `tanh`, so every log-scale lies in `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    identity: Vec<usize>,
    transformed: Vec<usize>,
    scale_net: Mlp,
    translate_net: Mlp,
}

/// Even/odd index split, alternating which half passes through.
///
/// Layer 0 passes the even indices through; for odd `dim` the even set is the
/// larger one.
pub fn alternating_masks(dim: usize, n_layers: usize) -> Vec<Vec<usize>> {
    (0..n_layers)
        .map(|l| (0..dim).filter(|i| i % 2 == l % 2).collect())
        .collect()
}

pub(crate) struct CouplingTape {
    pub(crate) transformed_in: Matrix,
    pub(crate) scale_tape: MlpTape,
    pub(crate) translate_tape: MlpTape,
}

impl CouplingLayer {
    /// Random layer with scale/translate networks of the given hidden widths.
    pub fn new<R: Rng + ?Sized>(dim: usize, identity: Vec<usize>, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let transformed = complement(dim, &identity)?;
        let mut dims = vec![identity.len()];
        dims.extend_from_slice(hidden);
        dims.push(transformed.len());
        let mut scale_net = Mlp::new(&dims, Activation::Tanh, rng)?;
        let mut translate_net = Mlp::new(&dims, Activation::Identity, rng)?;
        scale_net.scale_output_layer(INIT_OUTPUT_GAIN);
        translate_net.scale_output_layer(INIT_OUTPUT_GAIN);
        Ok(CouplingLayer { dim, identity, transformed, scale_net, translate_net })
    }

    pub fn from_parts(dim: usize, identity: Vec<usize>, scale_net: Mlp, translate_net: Mlp) -> Result<Self> {
        let transformed = complement(dim, &identity)?;
        for (name, net) in [("scale", &scale_net), ("translate", &translate_net)] {
            if net.input_dim() != identity.len() || net.output_dim() != transformed.len() {
                return Err(Error::shape(format!(
                    "{name} net maps {} -> {}, layer needs {} -> {}",
                    net.input_dim(),
                    net.output_dim(),
                    identity.len(),
                    transformed.len()
                )));
            }
        }
        if scale_net.output_activation() != Activation::Tanh {
            return Err(Error::Validation("scale network must end in tanh".into()));
        }
        if translate_net.output_activation() == Activation::Relu {
            return Err(Error::Validation("translate network cannot end in relu".into()));
        }
        Ok(CouplingLayer { dim, identity, transformed, scale_net, translate_net })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn identity_indices(&self) -> &[usize] {
        &self.identity
    }

    pub fn transformed_indices(&self) -> &[usize] {
        &self.transformed
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale_net
    }

    pub fn translate_net(&self) -> &Mlp {
        &self.translate_net
    }

    pub(crate) fn nets_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.scale_net, &mut self.translate_net)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape(format!("vector of length {} for a {}-d coupling", v.len(), self.dim)));
        }
        Ok(())
    }

    /// Density direction: returns `v'` and `log |det ∂v'/∂v|`.
    pub fn inverse_f(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len(v)?;
        let cond: Vec<f64> = self.identity.iter().map(|&i| v[i]).collect();
        let s = self.scale_net.forward(&cond)?;
        let t = self.translate_net.forward(&cond)?;
        let mut out = v.to_vec();
        let mut log_det = 0.0;
        for (j, &idx) in self.transformed.iter().enumerate() {
            out[idx] = v[idx] * s[j].exp() + t[j];
            log_det += s[j];
        }
        Ok((out, log_det))
    }

    /// Sampling direction, the exact inverse of [`CouplingLayer::inverse_f`].
    pub fn forward_g(&self, v_prime: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v_prime)?;
        let cond: Vec<f64> = self.identity.iter().map(|&i| v_prime[i]).collect();
        let s = self.scale_net.forward(&cond)?;
        let t = self.translate_net.forward(&cond)?;
        let mut out = v_prime.to_vec();
        for (j, &idx) in self.transformed.iter().enumerate() {
            out[idx] = (v_prime[idx] - t[j]) * (-s[j]).exp();
        }
        Ok(out)
    }

    /// Row-wise `f`; adds each row's log-det into `log_det`.
    pub(crate) fn inverse_f_batch(&self, v: &mut Matrix, log_det: &mut [f64]) -> Result<Option<CouplingTape>> {
        self.inverse_f_batch_impl(v, log_det, false)
    }

    pub(crate) fn inverse_f_batch_taped(&self, v: &mut Matrix, log_det: &mut [f64]) -> Result<CouplingTape> {
        Ok(self.inverse_f_batch_impl(v, log_det, true)?.expect("tape requested"))
    }

    fn inverse_f_batch_impl(&self, v: &mut Matrix, log_det: &mut [f64], keep: bool) -> Result<Option<CouplingTape>> {
        let cond = v.select_columns(&self.identity);
        let transformed_in = v.select_columns(&self.transformed);
        let scale_tape = self.scale_net.forward_batch(&cond)?;
        let translate_tape = self.translate_net.forward_batch(&cond)?;
        let s = scale_tape.output();
        let t = translate_tape.output();
        for r in 0..v.rows() {
            let (s_row, t_row, x_row) = (s.row(r), t.row(r), transformed_in.row(r));
            let mut ld = 0.0;
            let out = v.row_mut(r);
            for (j, &idx) in self.transformed.iter().enumerate() {
                out[idx] = x_row[j] * s_row[j].exp() + t_row[j];
                ld += s_row[j];
            }
            log_det[r] += ld;
        }
        Ok(keep.then_some(CouplingTape { transformed_in, scale_tape, translate_tape }))
    }

    pub(crate) fn forward_g_batch(&self, v: &mut Matrix) -> Result<()> {
        let cond = v.select_columns(&self.identity);
        let s = self.scale_net.forward_batch(&cond)?;
        let t = self.translate_net.forward_batch(&cond)?;
        let (s, t) = (s.output(), t.output());
        for r in 0..v.rows() {
            let (s_row, t_row) = (s.row(r), t.row(r));
            let out = v.row_mut(r);
            for (j, &idx) in self.transformed.iter().enumerate() {
                out[idx] = (out[idx] - t_row[j]) * (-s_row[j]).exp();
            }
        }
        Ok(())
    }
}

fn complement(dim: usize, identity: &[usize]) -> Result<Vec<usize>> {
    if identity.is_empty() || identity.len() >= dim {
        return Err(Error::Validation(format!(
            "identity set of size {} is not a proper nonempty subset of {dim} indices",
            identity.len()
        )));
    }
    if identity.windows(2).any(|w| w[0] >= w[1]) || identity.iter().any(|&i| i >= dim) {
        return Err(Error::Validation(format!("identity indices {identity:?} must be sorted, unique and < {dim}")));
    }
    Ok((0..dim).filter(|i| identity.binary_search(i).is_err()).collect())
}
