//! Real NVP density estimation.
//!
//! A [`FlowModel`] maps parameter space to a standard normal latent space
//! through a frozen diagonal standardization followed by affine coupling
//! layers. Density evaluation runs the layers in the `f` direction
//! (data → latent), sampling runs them in the `g` direction.

mod blob;
mod coupling;
mod model;
mod train;

pub use blob::MAGIC;
pub use coupling::{alternating_masks, CouplingLayer};
pub use model::{BaseDensity, FlowArch, FlowGradients, FlowModel, Standardizer};
pub use train::{fit, fit_with_report, FitReport, TrainConfig};
