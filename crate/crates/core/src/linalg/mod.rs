//! Small dense linear algebra, feed-forward networks with explicit backprop,
//! and the ADAM optimizer.

mod adam;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use matrix::{matmul_nn, matmul_nt, matmul_tn_acc, Matrix};
pub use mlp::{Activation, Gradients, Mlp, MlpTape};
