use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use super::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::TargetModel;

/// `p_k(θ) ∝ [p(θ)|J(θ)|]^{1/K} p(D_k | θ)` in unconstrained coordinates.
///
/// The prior pushed forward to the unconstrained space (prior times Jacobian)
/// is what gets the `1/K` power, so that `Σ_k log p_k` equals the full log
/// posterior up to a constant in the coordinates the flows live in.
#[derive(Debug, Clone)]
pub struct Subposterior {
    stats: Stats,
    inv_k: f64,
    label: String,
}

#[derive(Debug, Clone)]
enum Stats {
    Warped { n: f64, sum: f64, sum_sq: f64, sigma2: f64, prior_var: f64 },
    Gamma { y: Vec<f64>, log_y: Vec<f64>, beta: [f64; 2], prior_shape: f64, prior_scale: f64 },
    Logistic { x: Matrix, y: Vec<f64>, prior_var: f64 },
    Categorical { counts: [f64; 3], prior: [f64; 3] },
    Location { n: f64, ybar: Vec<f64>, precision: Matrix, const_term: f64, prior_var: f64 },
}

/// Builds the subposterior target for one shard of a `K`-way split.
pub fn subposterior(spec: &ModelSpec, shard: &Dataset, k: usize) -> Result<Subposterior> {
    spec.validate()?;
    if shard.is_empty() {
        return Err(Error::Validation("subposterior of an empty shard".into()));
    }
    if k == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    let expect_cols = match spec {
        ModelSpec::WarpedGaussian(_) | ModelSpec::GammaMixture(_) | ModelSpec::RareCategorical(_) => 1,
        ModelSpec::LogisticRegression(m) => m.p + 1,
        ModelSpec::GaussianLocation(m) => m.mean.len(),
    };
    if shard.rows.cols() != expect_cols {
        return Err(Error::shape(format!(
            "{} expects {expect_cols} columns, shard has {}",
            spec.name(),
            shard.rows.cols()
        )));
    }
    let col0 = || shard.rows.column(0);
    let stats = match spec {
        ModelSpec::WarpedGaussian(m) => {
            let y = col0();
            Stats::Warped {
                n: y.len() as f64,
                sum: y.iter().sum(),
                sum_sq: y.iter().map(|v| v * v).sum(),
                sigma2: m.sigma2,
                prior_var: m.prior_var,
            }
        }
        ModelSpec::GammaMixture(m) => {
            let y = col0();
            if y.iter().any(|&v| v <= 0.0) {
                return Err(Error::Validation("gamma observations must be positive".into()));
            }
            let log_y = y.iter().map(|v| v.ln()).collect();
            Stats::Gamma { y, log_y, beta: m.beta, prior_shape: m.prior_shape, prior_scale: m.prior_scale }
        }
        ModelSpec::LogisticRegression(m) => {
            let n = shard.len();
            let mut x = Matrix::zeros(n, m.p + 1);
            let mut y = Vec::with_capacity(n);
            for (i, row) in shard.rows.iter_rows().enumerate() {
                let xi = x.row_mut(i);
                xi[0] = 1.0;
                xi[1..].copy_from_slice(&row[..m.p]);
                y.push(row[m.p]);
            }
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation("logistic labels must be 0 or 1".into()));
            }
            Stats::Logistic { x, y, prior_var: m.prior_var }
        }
        ModelSpec::RareCategorical(m) => {
            let mut counts = [0.0; 3];
            for &c in shard.rows.as_slice() {
                match c {
                    c if c == 0.0 || c == 1.0 || c == 2.0 => counts[c as usize] += 1.0,
                    _ => return Err(Error::Validation(format!("category {c} outside {{0, 1, 2}}"))),
                }
            }
            Stats::Categorical { counts, prior: m.prior }
        }
        ModelSpec::GaussianLocation(m) => {
            let d = m.mean.len();
            let cov = Matrix::from_rows(&m.noise_cov)?;
            let cov_na = cov.to_nalgebra();
            let chol = cov_na.clone().cholesky().expect("validated");
            let precision = Matrix::from_nalgebra(&chol.inverse());
            let log_det: f64 = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
            let n = shard.len() as f64;
            let ybar = shard.rows.column_means();
            let mut scatter = 0.0;
            for row in shard.rows.iter_rows() {
                let r: Vec<f64> = row.iter().zip(&ybar).map(|(a, b)| a - b).collect();
                scatter += quad(&precision, &r);
            }
            let const_term = -0.5 * n * (d as f64 * (2.0 * PI).ln() + log_det) - 0.5 * scatter;
            Stats::Location { n, ybar, precision, const_term, prior_var: m.prior_var }
        }
    };
    Ok(Subposterior { stats, inv_k: 1.0 / k as f64, label: format!("{}[n={}, K={k}]", spec.name(), shard.len()) })
}

/// Closed-form posterior `(mean, covariance)` of the Gaussian location model given all data.
pub fn gaussian_location_posterior(spec: &ModelSpec, data: &Dataset) -> Result<(Vec<f64>, Matrix)> {
    let full = subposterior(spec, data, 1)?;
    let Stats::Location { n, ybar, precision, prior_var, .. } = &full.stats else {
        return Err(Error::Validation(format!("{} has no closed-form posterior", spec.name())));
    };
    let d = ybar.len();
    let prec = precision.to_nalgebra() * *n + nalgebra::DMatrix::identity(d, d) / *prior_var;
    let cov = prec.clone().cholesky().expect("sum of SPD matrices").inverse();
    let rhs = precision.to_nalgebra() * nalgebra::DVector::from_column_slice(ybar) * *n;
    let mean = &cov * rhs;
    Ok((mean.iter().copied().collect(), Matrix::from_nalgebra(&cov)))
}

fn quad(a: &Matrix, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            s += v[i] * a.get(i, j) * v[j];
        }
    }
    s
}

fn log_normal_iid(theta: &[f64], var: f64) -> f64 {
    let ss: f64 = theta.iter().map(|t| t * t).sum();
    -0.5 * theta.len() as f64 * (2.0 * PI * var).ln() - 0.5 * ss / var
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(log λ1, log λ2, log λ3)` from additive-log-ratio coordinates.
fn alr_log_simplex(a: &[f64]) -> [f64; 3] {
    let m = a[0].max(a[1]).max(0.0);
    let lse = m + ((a[0] - m).exp() + (a[1] - m).exp() + (-m).exp()).ln();
    [a[0] - lse, a[1] - lse, -lse]
}

impl Subposterior {
    fn value_and_grad(&self, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let ik = self.inv_k;
        match &self.stats {
            Stats::Warped { n, sum, sum_sq, sigma2, prior_var } => {
                let m = theta[0] + theta[1] * theta[1];
                let lik = -0.5 * n * (2.0 * PI * sigma2).ln() - (sum_sq - 2.0 * m * sum + n * m * m) / (2.0 * sigma2);
                let value = ik * log_normal_iid(theta, *prior_var) + lik;
                let dm = (sum - n * m) / sigma2;
                let grad = vec![dm - ik * theta[0] / prior_var, 2.0 * theta[1] * dm - ik * theta[1] / prior_var];
                (value, grad)
            }
            Stats::Gamma { y, log_y, beta, prior_shape, prior_scale } => {
                let alpha = [theta[0].exp(), theta[1].exp()];
                let norm = [0, 1].map(|j| alpha[j] * beta[j].ln() - ln_gamma(alpha[j]));
                let mut lik = 0.0;
                let mut dalpha = [0.0; 2];
                let mut resp = [0.0; 2];
                let half = 0.5f64.ln();
                for (&yi, &lyi) in y.iter().zip(log_y) {
                    let l = [0, 1].map(|j| half + norm[j] + (alpha[j] - 1.0) * lyi - beta[j] * yi);
                    let mx = l[0].max(l[1]);
                    let lse = mx + ((l[0] - mx).exp() + (l[1] - mx).exp()).ln();
                    lik += lse;
                    if want_grad {
                        for j in 0..2 {
                            let r = (l[j] - lse).exp();
                            dalpha[j] += r * lyi;
                            resp[j] += r;
                        }
                    }
                }
                let (a, s) = (*prior_shape, *prior_scale);
                let mut value = lik;
                let mut grad = vec![0.0; 2];
                for j in 0..2 {
                    // Gamma(a, s) prior on α_j, pushed to log α_j: a·θ − α/s − lnΓ(a) − a ln s.
                    value += ik * (a * theta[j] - alpha[j] / s - ln_gamma(a) - a * s.ln());
                    if want_grad {
                        grad[j] = ik * (a - alpha[j] / s);
                    }
                }
                if want_grad {
                    // Σ_i r_ij (ln β_j − ψ(α_j) + ln y_i) = Σ_i r_ij ln y_i + (ln β_j − ψ(α_j)) Σ_i r_ij
                    for j in 0..2 {
                        let d = dalpha[j] + (beta[j].ln() - digamma(alpha[j])) * resp[j];
                        grad[j] += alpha[j] * d;
                    }
                }
                (value, grad)
            }
            Stats::Logistic { x, y, prior_var } => {
                let mut value = ik * log_normal_iid(theta, *prior_var);
                let mut grad: Vec<f64> = theta.iter().map(|t| -ik * t / prior_var).collect();
                for (row, &yi) in x.iter_rows().zip(y) {
                    let eta: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
                    value += yi * eta - softplus(eta);
                    if want_grad {
                        let r = yi - sigmoid(eta);
                        for (g, xv) in grad.iter_mut().zip(row) {
                            *g += r * xv;
                        }
                    }
                }
                (value, grad)
            }
            Stats::Categorical { counts, prior } => {
                let log_lambda = alr_log_simplex(theta);
                // Dirichlet density times the alr Jacobian Π λ_j: Σ α_j ln λ_j + ln B(α)^{-1}.
                let total_prior: f64 = prior.iter().sum();
                let log_norm = ln_gamma(total_prior) - prior.iter().map(|&a| ln_gamma(a)).sum::<f64>();
                let c: [f64; 3] = [0, 1, 2].map(|j| counts[j] + ik * prior[j]);
                let value = ik * log_norm + (0..3).map(|j| c[j] * log_lambda[j]).sum::<f64>();
                let c_total: f64 = c.iter().sum();
                let grad = (0..2).map(|i| c[i] - log_lambda[i].exp() * c_total).collect();
                (value, grad)
            }
            Stats::Location { n, ybar, precision, const_term, prior_var } => {
                let r: Vec<f64> = theta.iter().zip(ybar).map(|(a, b)| a - b).collect();
                let value = ik * log_normal_iid(theta, *prior_var) + const_term - 0.5 * n * quad(precision, &r);
                let d = theta.len();
                let grad = (0..d)
                    .map(|i| -ik * theta[i] / prior_var - n * (0..d).map(|j| precision.get(i, j) * r[j]).sum::<f64>())
                    .collect();
                (value, grad)
            }
        }
    }
}

impl TargetModel for Subposterior {
    fn dim(&self) -> usize {
        match &self.stats {
            Stats::Logistic { x, .. } => x.cols(),
            Stats::Location { ybar, .. } => ybar.len(),
            _ => 2,
        }
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim(), "parameter dimension");
        let v = self.value_and_grad(theta, false).0;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn grad_log_density(&self, theta: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(theta.len(), self.dim(), "parameter dimension");
        Some(self.value_and_grad(theta, true).1)
    }

    fn to_constrained(&self, theta: &[f64]) -> Vec<f64> {
        match &self.stats {
            Stats::Gamma { .. } => theta.iter().map(|t| t.exp()).collect(),
            Stats::Categorical { .. } => alr_log_simplex(theta).iter().map(|l| l.exp()).collect(),
            _ => theta.to_vec(),
        }
    }

    fn label(&self) -> &str {
        &self.label
    }
}
