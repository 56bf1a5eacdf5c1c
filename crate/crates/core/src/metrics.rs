//! Comparison metrics between approximate and ground-truth posterior draws,
//! and communication accounting.

use crate::aggregate::GaussianSummary;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_pair(approx: &Matrix, truth: &Matrix) -> Result<()> {
    if approx.rows() == 0 || truth.rows() == 0 {
        return Err(Error::Validation("metric on an empty sample set".into()));
    }
    if approx.cols() != truth.cols() {
        return Err(Error::shape(format!("dimension {} vs {}", approx.cols(), truth.cols())));
    }
    Ok(())
}

/// `‖mean(approx) − mean(truth)‖₂ / √D`.
pub fn rmse(approx: &Matrix, truth: &Matrix) -> Result<f64> {
    check_pair(approx, truth)?;
    let ss: f64 = approx.column_means().iter().zip(truth.column_means()).map(|(a, t)| (a - t).powi(2)).sum();
    Ok((ss / approx.cols() as f64).sqrt())
}

fn dispersion_about(m: &Matrix, center: &[f64]) -> f64 {
    m.iter_rows().map(|r| r.iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum::<f64>()).sum()
}

/// `sqrt(Σ_r ‖θ_r − θ̄′‖² / Σ_r ‖θ′_r − θ̄′‖²)` with `θ̄′` the truth mean.
///
/// Both sums are divided by their row counts, so sets of different sizes compare on a per-draw basis.
pub fn concentration_ratio(approx: &Matrix, truth: &Matrix) -> Result<f64> {
    check_pair(approx, truth)?;
    let center = truth.column_means();
    let den = dispersion_about(truth, &center) / truth.rows() as f64;
    if !(den > 0.0) {
        return Err(Error::Degenerate("ground-truth draws have zero dispersion".into()));
    }
    let num = dispersion_about(approx, &center) / approx.rows() as f64;
    Ok((num / den).sqrt())
}

/// `KL(N_approx ‖ N_truth)` between moment-matched Gaussians.
pub fn gaussian_kl(approx: &Matrix, truth: &Matrix) -> Result<f64> {
    check_pair(approx, truth)?;
    gaussian_kl_between(&GaussianSummary::fit(approx)?, &GaussianSummary::fit(truth)?)
}

/// Closed-form KL divergence between two Gaussians; singular covariances get a ridge.
pub fn gaussian_kl_between(a: &GaussianSummary, t: &GaussianSummary) -> Result<f64> {
    let d = a.dim();
    if t.dim() != d {
        return Err(Error::shape(format!("dimension {d} vs {}", t.dim())));
    }
    let (ct, _) = crate::aggregate::gaussian::cholesky_with_ridge(&t.cov.to_nalgebra(), "KL truth covariance")?;
    let (ca, _) = crate::aggregate::gaussian::cholesky_with_ridge(&a.cov.to_nalgebra(), "KL approximation covariance")?;
    let log_det = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let sigma_a = ca.l() * ca.l().transpose();
    let trace = ct.solve(&sigma_a).trace();
    let delta = nalgebra::DVector::from_iterator(d, t.mean.iter().zip(&a.mean).map(|(x, y)| x - y));
    let maha = delta.dot(&ct.solve(&delta));
    Ok(0.5 * (trace + maha - d as f64 + log_det(&ct) - log_det(&ca)))
}

/// Bytes shipped to the aggregator by NAP versus shipping raw draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommunicationReport {
    /// Total serialized flow bytes; independent of the number of draws.
    pub nap_bytes: usize,
    /// `S · K · D · 8`: the cost of sending every subposterior draw as f64.
    pub sample_bytes: usize,
}

pub fn communication_report(blob_lens: &[usize], samples_per_shard: usize, dim: usize) -> CommunicationReport {
    CommunicationReport {
        nap_bytes: blob_lens.iter().sum(),
        sample_bytes: samples_per_shard * blob_lens.len() * dim * std::mem::size_of::<f64>(),
    }
}

/// One method's scores against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub rmse: f64,
    pub concentration_ratio: f64,
    pub kl_divergence: f64,
    pub weight_ess: Option<f64>,
    pub bytes_communicated: usize,
    /// `(stage, seconds)`, kept out of the deterministic CSV output.
    pub wall_times: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn compute(method: &str, approx: &Matrix, truth: &Matrix) -> Result<Self> {
        Ok(MetricsReport {
            method: method.into(),
            rmse: rmse(approx, truth)?,
            concentration_ratio: concentration_ratio(approx, truth)?,
            kl_divergence: gaussian_kl(approx, truth)?,
            weight_ess: None,
            bytes_communicated: 0,
            wall_times: Vec::new(),
        })
    }
}
