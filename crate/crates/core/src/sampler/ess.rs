use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// Set when the series is constant and no autocorrelation exists.
    pub degenerate: bool,
}

/// Effective sample size by Geyer's initial positive sequence estimator.
///
/// Pairs of autocorrelations `ρ_2m + ρ_2m+1` are summed until the first
/// non-positive pair; `ESS = n / (-1 + 2 Σ pairs)`, capped at `n`.
pub fn effective_sample_size(values: &[f64]) -> Result<EssEstimate> {
    let n = values.len();
    if n < 10 {
        return Err(Error::Validation(format!("ESS needs at least 10 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let var = autocov(0);
    if !(var > 0.0) {
        return Ok(EssEstimate { ess: 0.0, degenerate: true });
    }
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    let n_f = n as f64;
    let ess = if tau <= 1.0 { n_f } else { n_f / tau };
    Ok(EssEstimate { ess, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_series_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..10000).map(|_| rng.sample(StandardNormal)).collect();
        let e = effective_sample_size(&x).unwrap();
        assert!((8000.0..=12000.0).contains(&e.ess), "{}", e.ess);
        assert!(e.ess <= 10000.0);
    }

    #[test]
    fn alternating_series_is_capped_at_n() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(effective_sample_size(&x).unwrap().ess, 1000.0);
    }

    #[test]
    fn ar1_matches_closed_form() {
        let rho: f64 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = vec![0.0; 10000];
        for t in 1..x.len() {
            x[t] = rho * x[t - 1] + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let want = 10000.0 * (1.0 - rho) / (1.0 + rho);
        let got = effective_sample_size(&x).unwrap().ess;
        assert!(got > want / 1.5 && got < want * 1.5, "{got} vs {want}");
    }

    #[test]
    fn constant_series_is_degenerate() {
        let e = effective_sample_size(&[3.0; 50]).unwrap();
        assert_eq!(e.ess, 0.0);
        assert!(e.degenerate);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(effective_sample_size(&[1.0; 9]).is_err());
    }
}
