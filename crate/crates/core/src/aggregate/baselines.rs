use nalgebra::DMatrix;
use rand::Rng;

use super::gaussian::{cholesky_with_ridge, GaussianSummary};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::{ChainDiagnostics, SampleSet};

/// A merged sample set plus any numerical warnings raised while producing it.
#[derive(Debug, Clone)]
pub struct Merged {
    pub samples: SampleSet,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ParametricMerge {
    pub summary: GaussianSummary,
    pub samples: SampleSet,
    pub warnings: Vec<String>,
}

fn check_sets(sets: &[&Matrix]) -> Result<usize> {
    let first = sets.first().ok_or_else(|| Error::Validation("no sample sets to merge".into()))?;
    let d = first.cols();
    for (k, s) in sets.iter().enumerate() {
        if s.cols() != d {
            return Err(Error::shape(format!("sample set {k} has dimension {}, expected {d}", s.cols())));
        }
        if s.rows() < 2 {
            return Err(Error::Validation(format!("sample set {k} has fewer than two draws")));
        }
    }
    Ok(d)
}

fn merged_set(values: Matrix, label: &str) -> SampleSet {
    SampleSet { values, label: label.into(), shard: None, diagnostics: ChainDiagnostics::default() }
}

/// Consensus Monte Carlo: `θ_s = (Σ_k W_k)^{-1} Σ_k W_k θ_s^{(k)}` with `W_k` the inverse sample covariance of set `k`.
pub fn consensus_merge(sets: &[&Matrix]) -> Result<Merged> {
    let d = check_sets(sets)?;
    let s = sets[0].rows();
    if let Some(k) = sets.iter().position(|m| m.rows() != s) {
        return Err(Error::shape(format!("sample set {k} has {} draws, expected {s}", sets[k].rows())));
    }
    let mut warnings = Vec::new();
    let mut weights = Vec::with_capacity(sets.len());
    let mut total = DMatrix::zeros(d, d);
    for (k, set) in sets.iter().enumerate() {
        let (c, ridged) = cholesky_with_ridge(&set.covariance().to_nalgebra(), &format!("consensus set {k}"))?;
        if ridged {
            warnings.push(format!("consensus: covariance of set {k} is singular, ridge added"));
        }
        let w = c.inverse();
        total += &w;
        weights.push(w);
    }
    let (c, ridged) = cholesky_with_ridge(&total, "consensus total precision")?;
    if ridged {
        warnings.push("consensus: total precision is singular, ridge added".into());
    }
    let total_inv = c.inverse();
    // A_k = (Σ W)^{-1} W_k, so each output row is Σ_k A_k θ_s^{(k)}.
    let mixers: Vec<Matrix> = weights.iter().map(|w| Matrix::from_nalgebra(&(&total_inv * w))).collect();
    let mut out = Matrix::zeros(s, d);
    for r in 0..s {
        let row = out.row_mut(r);
        for (a, set) in mixers.iter().zip(sets) {
            let theta = set.row(r);
            for i in 0..d {
                row[i] += (0..d).map(|j| a.get(i, j) * theta[j]).sum::<f64>();
            }
        }
    }
    Ok(Merged { samples: merged_set(out, "consensus"), warnings })
}

/// Product of per-set Gaussian moment fits in closed form, followed by `r` exact draws.
pub fn parametric_merge<R: Rng + ?Sized>(sets: &[&Matrix], r: usize, rng: &mut R) -> Result<ParametricMerge> {
    check_sets(sets)?;
    let fits = sets.iter().map(|s| GaussianSummary::fit(s)).collect::<Result<Vec<_>>>()?;
    let (summary, ridged) = GaussianSummary::product(&fits)?;
    let warnings = if ridged { vec!["parametric: singular member covariance, ridge added".to_string()] } else { vec![] };
    let values = summary.sample(r, rng)?;
    Ok(ParametricMerge { summary, samples: merged_set(values, "param"), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{BoundedDensity, DiagonalGaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_sets_merge_to_the_constant() {
        let c = Matrix::from_vec(50, 2, [1.5, -2.0].repeat(50)).unwrap();
        let m = consensus_merge(&[&c, &c]).unwrap();
        assert!(!m.warnings.is_empty());
        for row in m.samples.values.iter_rows() {
            assert!((row[0] - 1.5).abs() < 1e-12 && (row[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_covariances_average_the_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means = [[0.0, 0.0], [2.0, -1.0], [4.0, 4.0]];
        let sets: Vec<Matrix> = means
            .iter()
            .map(|m| DiagonalGaussian::new(m.to_vec(), vec![1.0; 2]).unwrap().sample(20000, &mut rng))
            .collect();
        let refs: Vec<&Matrix> = sets.iter().collect();
        let m = consensus_merge(&refs).unwrap();
        let mean = m.samples.values.column_means();
        // Combined draws have variance ≈ 1/3 per coordinate.
        let tol = 4.0 * (1.0f64 / 3.0 / 20000.0).sqrt();
        assert!((mean[0] - 2.0).abs() < tol && (mean[1] - 1.0).abs() < tol, "{mean:?}");
    }

    #[test]
    fn doubling_a_covariance_halves_its_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap().sample(1000, &mut rng);
        let a = Matrix::from_vec(1000, 1, e.as_slice().iter().map(|v| 1.0 + v).collect()).unwrap();
        let b = Matrix::from_vec(1000, 1, e.as_slice().iter().map(|v| 7.0 + 2f64.sqrt() * v).collect()).unwrap();
        let m = consensus_merge(&[&a, &b]).unwrap();
        // Weights 1/σ² and 1/(2σ²): combined mean (2·ā + b̄)/3.
        let want = (2.0 * a.column_means()[0] + b.column_means()[0]) / 3.0;
        assert!((m.samples.values.column_means()[0] - want).abs() < 1e-10);
        let short = a.head(10);
        assert!(consensus_merge(&[&a, &short]).is_err());
    }

    #[test]
    fn parametric_matches_closed_form_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap().sample(50000, &mut rng);
        let b = DiagonalGaussian::new(vec![1.0], vec![1.0]).unwrap().sample(50000, &mut rng);
        let p = parametric_merge(&[&a, &b], 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((p.summary.mean[0] - 0.5).abs() < 0.02 && (p.summary.cov.get(0, 0) - 0.5).abs() < 0.02);
        assert_eq!(p.samples.n(), 100);
        let q = parametric_merge(&[&a, &b], 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.samples.values, q.samples.values);
    }
}
