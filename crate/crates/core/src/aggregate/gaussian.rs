use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Added to the diagonal of a covariance that fails to factor.
pub const RIDGE: f64 = 1e-8;

/// Cholesky factor of `a`, retried once with `RIDGE · I`; the flag reports whether the ridge was needed.
pub(crate) fn cholesky_with_ridge(a: &DMatrix<f64>, what: &str) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(c) = a.clone().cholesky() {
        return Ok((c, false));
    }
    let n = a.nrows();
    match (a + DMatrix::identity(n, n) * RIDGE).cholesky() {
        Some(c) => {
            log::warn!("{what}: covariance is singular, added ridge {RIDGE}");
            Ok((c, true))
        }
        None => Err(Error::Degenerate(format!("{what}: covariance is not positive semi-definite"))),
    }
}

/// Inverse of a covariance matrix, ridged when singular.
pub fn inverse_with_ridge(cov: &Matrix, what: &str) -> Result<(Matrix, bool)> {
    let (c, ridged) = cholesky_with_ridge(&cov.to_nalgebra(), what)?;
    Ok((Matrix::from_nalgebra(&c.inverse()), ridged))
}

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.rows() != d || cov.cols() != d {
            return Err(Error::shape(format!("mean of length {d} with {}x{} covariance", cov.rows(), cov.cols())));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov.get(i, j) - cov.get(j, i)).abs() > 1e-12 * (1.0 + cov.get(i, j).abs()) {
                    return Err(Error::Validation("covariance is not symmetric".into()));
                }
            }
        }
        Ok(GaussianSummary { mean, cov })
    }

    /// Sample mean and unbiased covariance; needs more rows than columns.
    pub fn fit(samples: &Matrix) -> Result<Self> {
        if samples.rows() <= samples.cols() {
            return Err(Error::Validation(format!(
                "moment fit needs more draws than dimensions ({} ≤ {})",
                samples.rows(),
                samples.cols()
            )));
        }
        Ok(GaussianSummary { mean: samples.column_means(), cov: samples.covariance() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Closed-form product of Gaussian densities: `Λ = Σ_k Λ_k`, `m = Λ^{-1} Σ_k Λ_k m_k`.
    /// The flag reports whether any member covariance needed a ridge.
    pub fn product(members: &[GaussianSummary]) -> Result<(GaussianSummary, bool)> {
        let first = members.first().ok_or_else(|| Error::Validation("product of zero gaussians".into()))?;
        let d = first.dim();
        let mut precision = DMatrix::zeros(d, d);
        let mut eta = DVector::zeros(d);
        let mut any_ridge = false;
        for (k, g) in members.iter().enumerate() {
            if g.dim() != d {
                return Err(Error::shape(format!("member {k} has dimension {}, expected {d}", g.dim())));
            }
            let (c, ridged) = cholesky_with_ridge(&g.cov.to_nalgebra(), &format!("gaussian product member {k}"))?;
            any_ridge |= ridged;
            let lam = c.inverse();
            eta += &lam * DVector::from_column_slice(&g.mean);
            precision += lam;
        }
        let (c, ridged) = cholesky_with_ridge(&precision, "gaussian product precision")?;
        let cov = c.inverse();
        let mean = &cov * eta;
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok((GaussianSummary { mean: mean.iter().copied().collect(), cov: Matrix::from_nalgebra(&cov) }, any_ridge || ridged))
    }

    /// `n` exact draws `m + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Matrix> {
        let d = self.dim();
        let (c, _) = cholesky_with_ridge(&self.cov.to_nalgebra(), "gaussian sampling")?;
        let l = c.l();
        let mut out = Matrix::zeros(n, d);
        let mut z = vec![0.0; d];
        for r in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let row = out.row_mut(r);
            for i in 0..d {
                row[i] = self.mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(m: f64, v: f64) -> GaussianSummary {
        GaussianSummary::new(vec![m], Matrix::from_vec(1, 1, vec![v]).unwrap()).unwrap()
    }

    #[test]
    fn identical_standard_normals_multiply_to_scaled_identity() {
        let k = 4;
        let g = GaussianSummary::new(vec![0.0; 3], Matrix::identity(3)).unwrap();
        let (p, ridged) = GaussianSummary::product(&vec![g; k]).unwrap();
        assert!(!ridged);
        assert!(p.mean.iter().all(|m| m.abs() < 1e-15));
        assert!(p.cov.max_abs_diff(&{
            let mut i = Matrix::identity(3);
            i.as_mut_slice().iter_mut().for_each(|v| *v /= k as f64);
            i
        }) < 1e-15);
    }

    #[test]
    fn two_unit_normals_multiply_to_half_variance() {
        let (p, _) = GaussianSummary::product(&[g1(0.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert!((p.mean[0] - 0.5).abs() < 1e-15);
        assert!((p.cov.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_covariance_is_ridged() {
        let g = GaussianSummary::new(vec![1.0, 2.0], Matrix::zeros(2, 2)).unwrap();
        let (p, ridged) = GaussianSummary::product(&[g.clone(), g]).unwrap();
        assert!(ridged);
        assert!((p.mean[0] - 1.0).abs() < 1e-9 && (p.mean[1] - 2.0).abs() < 1e-9);
        let bad = GaussianSummary::new(vec![0.0], Matrix::from_vec(1, 1, vec![-1.0]).unwrap()).unwrap();
        assert!(matches!(GaussianSummary::product(&[bad]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn samples_reproduce_moments() {
        let cov = Matrix::from_rows(&[[2.0, 0.6], [0.6, 0.5]]).unwrap();
        let g = GaussianSummary::new(vec![1.0, -1.0], cov.clone()).unwrap();
        let s = g.sample(40000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let fit = GaussianSummary::fit(&s).unwrap();
        assert!((fit.mean[0] - 1.0).abs() < 0.03 && (fit.mean[1] + 1.0).abs() < 0.015);
        assert!(fit.cov.max_abs_diff(&cov) < 0.05);
        assert!(GaussianSummary::fit(&s.head(2)).is_err());
    }

    proptest! {
        #[test]
        fn product_mean_is_a_convex_combination_in_one_dimension(
            members in prop::collection::vec((-10.0f64..10.0, 0.01f64..10.0), 1..8)
        ) {
            let gs: Vec<_> = members.iter().map(|&(m, v)| g1(m, v)).collect();
            let (p, _) = GaussianSummary::product(&gs).unwrap();
            let lo = members.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.mean[0] >= lo - 1e-9 && p.mean[0] <= hi + 1e-9);
            let prec: f64 = members.iter().map(|m| 1.0 / m.1).sum();
            prop_assert!((p.cov.get(0, 0) * prec - 1.0).abs() < 1e-9);
        }
    }
}
