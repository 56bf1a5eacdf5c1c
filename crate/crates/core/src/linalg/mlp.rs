use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{matmul_nn, matmul_nt, matmul_tn_acc, Matrix};
use crate::error::{Error, Result};

/// Largest `f64` strictly below one.
const TANH_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Element-wise activation. Hidden layers are always [`Activation::Relu`];
/// the output layer is [`Activation::Identity`] or [`Activation::Tanh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    /// Wire code used by the flow blob format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            // f64 tanh rounds to exactly ±1 beyond |x| ≈ 19; keep the range open.
            Activation::Tanh => x.tanh().clamp(-TANH_MAX, TANH_MAX),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected network: relu hidden layers, configurable output activation.
///
/// Layer `i` maps `layer_dims[i]` inputs to `layer_dims[i + 1]` outputs with
/// weights stored as a `out × in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    output_activation: Activation,
}

/// Parameter gradients of an [`Mlp`], shaped exactly like its weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Post-activation values of every layer for a batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    activations: Vec<Matrix>,
}

impl MlpTape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape always holds the input")
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::shape("an MLP needs at least input and output dims"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::shape(format!("zero-width layer in {layer_dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], output_activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(layer_dims, output_activation)?;
        for w in &mut net.weights {
            let a = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            w.as_mut_slice().iter_mut().for_each(|x| *x = dist.sample(rng));
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize], output_activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Mlp { layer_dims: layer_dims.to_vec(), weights, biases, output_activation })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>, output_activation: Activation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape(format!("{} weight matrices but {} bias vectors", weights.len(), biases.len())));
        }
        let mut layer_dims = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_dims.last().unwrap() || b.len() != w.rows() {
                return Err(Error::shape(format!("layer {i} is {}x{} with {} biases", w.rows(), w.cols(), b.len())));
            }
            layer_dims.push(w.rows());
        }
        validate_dims(&layer_dims)?;
        Ok(Mlp { layer_dims, weights, biases, output_activation })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// Activation applied after layer `i`.
    pub fn activation(&self, i: usize) -> Activation {
        if i + 1 == self.weights.len() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Mutable weight and bias storage of layer `i`; shapes cannot change.
    pub fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        (self.weights[i].as_mut_slice(), &mut self.biases[i])
    }

    /// Multiplies the last layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(w) = self.weights.last_mut() {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Parameter slices in the order `w0, b0, w1, b1, ...`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!("input has {} values, network expects {}", input.len(), self.input_dim())));
        }
        let mut a = input.to_vec();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let act = self.activation(i);
            a = w
                .iter_rows()
                .zip(b)
                .map(|(row, &bias)| act.apply(row.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + bias))
                .collect();
        }
        Ok(a)
    }

    /// Gradient of `cotangent · forward(input)` with respect to the parameters and the input.
    pub fn backward(&self, input: &[f64], output_cotangent: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if output_cotangent.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "cotangent has {} values, network outputs {}",
                output_cotangent.len(),
                self.output_dim()
            )));
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let tape = self.forward_batch(&x)?;
        let cot = Matrix::from_vec(1, output_cotangent.len(), output_cotangent.to_vec())?;
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward_batch(&tape, &cot, &mut grads)?;
        Ok((grads, dx.into_vec()))
    }

    /// Forward pass over the rows of `input`, recording activations.
    pub fn forward_batch(&self, input: &Matrix) -> Result<MlpTape> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(format!("batch has {} columns, network expects {}", input.cols(), self.input_dim())));
        }
        let n = input.rows();
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(input.clone());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Matrix::zeros(n, w.rows());
            matmul_nt(activations.last().unwrap(), w, &mut z)?;
            let act = self.activation(i);
            for row in z.as_mut_slice().chunks_exact_mut(w.rows()) {
                for (v, &bias) in row.iter_mut().zip(b) {
                    *v = act.apply(*v + bias);
                }
            }
            activations.push(z);
        }
        Ok(MlpTape { activations })
    }

    /// Accumulates parameter gradients of `Σ_rows cotangent · output` into
    /// `grads` and returns the gradient with respect to the batch input.
    pub fn backward_batch(&self, tape: &MlpTape, cotangent: &Matrix, grads: &mut Gradients) -> Result<Matrix> {
        let out = tape.output();
        if cotangent.rows() != out.rows() || cotangent.cols() != out.cols() {
            return Err(Error::shape(format!(
                "cotangent is {}x{}, output is {}x{}",
                cotangent.rows(),
                cotangent.cols(),
                out.rows(),
                out.cols()
            )));
        }
        if grads.weights.len() != self.weights.len() {
            return Err(Error::shape("gradient buffer does not match network"));
        }
        let mut delta = cotangent.clone();
        let last = self.weights.len() - 1;
        apply_derivative(&mut delta, out, self.output_activation);
        for i in (0..=last).rev() {
            let a_prev = &tape.activations[i];
            matmul_tn_acc(&delta, a_prev, &mut grads.weights[i])?;
            let width = delta.cols();
            for row in delta.as_slice().chunks_exact(width) {
                for (g, d) in grads.biases[i].iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut upstream = Matrix::zeros(delta.rows(), self.weights[i].cols());
            matmul_nn(&delta, &self.weights[i], &mut upstream)?;
            if i > 0 {
                apply_derivative(&mut upstream, a_prev, Activation::Relu);
            }
            delta = upstream;
        }
        Ok(delta)
    }
}

fn apply_derivative(delta: &mut Matrix, output: &Matrix, act: Activation) {
    if act == Activation::Identity {
        return;
    }
    for (d, &y) in delta.as_mut_slice().iter_mut().zip(output.as_slice()) {
        *d *= act.derivative_from_output(y);
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.as_mut_slice().fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Slices in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}
