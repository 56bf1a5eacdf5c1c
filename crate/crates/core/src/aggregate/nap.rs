use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SubposteriorEnsemble;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::{ChainDiagnostics, SampleSet};

/// Weight ESS below this attaches a warning to the output.
pub const WEIGHT_ESS_WARNING: f64 = 10.0;

/// Draws per parallel density-evaluation task; fixed so results do not depend on the thread count.
const CHUNK: usize = 512;

/// Which ensemble members act as proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NapMode {
    /// Propose from member `k` only.
    Single(usize),
    /// One installment per member, each with `⌈T/K⌉` candidates and `⌈R/K⌉` resampled draws.
    Installments,
}

/// Importance-weighted candidates from one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub draws: Matrix,
    /// Unnormalized `log w_t`.
    pub log_weights: Vec<f64>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    pub proposal: usize,
    /// `log M`, the bound every `log_weights` entry satisfies.
    pub log_bound: f64,
    /// `log Σ_t w_t` of the unnormalized weights.
    pub log_normalizer: f64,
}

impl WeightedSamples {
    /// Weights candidate draws taken from member `proposal`.
    pub fn new(ensemble: &SubposteriorEnsemble, proposal: usize, draws: Matrix) -> Result<Self> {
        let log_weights = nap_log_weights(ensemble, proposal, &draws)?;
        let log_normalizer = log_sum_exp(&log_weights);
        let weights = log_weights.iter().map(|lw| (lw - log_normalizer).exp()).collect();
        Ok(WeightedSamples { draws, log_weights, weights, proposal, log_bound: ensemble.log_weight_bound(proposal), log_normalizer })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(Σ w)² / Σ w²`.
    pub fn ess(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        s * s / s2
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// `exp(log M − log Σ w)`, the largest normalized weight boundedness allows.
    pub fn weight_cap(&self) -> f64 {
        (self.log_bound - self.log_normalizer).exp()
    }

    /// `n` indices drawn with replacement from `Categorical(w)`.
    pub fn resample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.weights).expect("normalized weights have positive mass");
        (0..n).map(|_| rng.sample(&dist)).collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log w_t = Σ_{k'≠k} log p̂_{k'}(θ_t)`, which equals `Σ_{k'} log p̂_{k'} − log p̂_k` without the cancellation.
///
/// Every value is checked against `log M = Σ_{k'≠k} sup log p̂_{k'}`; both sums run in
/// member order, so the check is exact. NaN densities count as zero weight.
pub fn nap_log_weights(ensemble: &SubposteriorEnsemble, proposal: usize, draws: &Matrix) -> Result<Vec<f64>> {
    let k = ensemble.k();
    if proposal >= k {
        return Err(Error::Validation(format!("proposal {proposal} out of range for K = {k}")));
    }
    if draws.cols() != ensemble.dim() {
        return Err(Error::shape(format!("draws have {} columns, ensemble dimension is {}", draws.cols(), ensemble.dim())));
    }
    let n = draws.rows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + CHUNK).min(n)).collect();
            let block = draws.select_rows(&idx);
            let mut acc = vec![0.0; idx.len()];
            for j in (0..k).filter(|&j| j != proposal) {
                for (a, lp) in acc.iter_mut().zip(ensemble.member(j).log_prob_batch(&block)) {
                    *a += lp;
                }
            }
            acc
        })
        .collect();
    let mut log_w: Vec<f64> = chunks.into_iter().flatten().collect();
    let bound = ensemble.log_weight_bound(proposal);
    let mut nan = 0;
    for (t, lw) in log_w.iter_mut().enumerate() {
        if lw.is_nan() {
            *lw = f64::NEG_INFINITY;
            nan += 1;
        } else if *lw > bound {
            return Err(Error::BoundViolation { proposal, draw: t, log_weight: *lw, bound });
        }
    }
    if nan > 0 {
        log::warn!("proposal {proposal}: {nan} draws had NaN density and get zero weight");
    }
    if n > 0 && log_w.iter().all(|lw| *lw == f64::NEG_INFINITY) {
        return Err(Error::DegenerateWeights { installment: 0, proposal });
    }
    Ok(log_w)
}

/// Summary of one proposal's importance-sampling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InstallmentReport {
    pub proposal: usize,
    pub candidates: usize,
    pub resampled: usize,
    pub weight_ess: f64,
    pub max_weight: f64,
    pub max_log_weight: f64,
    pub log_bound: f64,
}

#[derive(Debug, Clone)]
pub struct NapSirOutput {
    pub samples: SampleSet,
    pub installments: Vec<InstallmentReport>,
    pub warnings: Vec<String>,
}

impl NapSirOutput {
    /// Total effective number of importance samples across installments.
    pub fn weight_ess(&self) -> f64 {
        self.installments.iter().map(|i| i.weight_ess).sum()
    }
}

/// NAP sampling-importance-resampling: draw `T` candidates from a proposal
/// member, weight them by the product of the other members, and resample `R`.
pub fn nap_sir(ensemble: &SubposteriorEnsemble, t: usize, r: usize, mode: NapMode, rng: &mut dyn RngCore) -> Result<NapSirOutput> {
    if r == 0 || t < r {
        return Err(Error::Validation(format!("NAP-SIR needs T ≥ R ≥ 1, got T = {t}, R = {r}")));
    }
    let k = ensemble.k();
    let plan: Vec<(usize, usize, usize)> = match mode {
        NapMode::Single(p) => {
            if p >= k {
                return Err(Error::Validation(format!("proposal {p} out of range for K = {k}")));
            }
            vec![(p, t, r)]
        }
        NapMode::Installments => (0..k).map(|p| (p, t.div_ceil(k), r.div_ceil(k))).collect(),
    };
    let mut parts = Vec::with_capacity(plan.len());
    let mut installments = Vec::with_capacity(plan.len());
    let mut warnings = Vec::new();
    for (i, &(proposal, n_cand, n_keep)) in plan.iter().enumerate() {
        let draws = ensemble.member(proposal).sample(n_cand, rng);
        let ws = WeightedSamples::new(ensemble, proposal, draws).map_err(|e| match e {
            Error::DegenerateWeights { proposal, .. } => Error::DegenerateWeights { installment: i, proposal },
            other => other,
        })?;
        debug_assert!(ws.max_weight() <= ws.weight_cap());
        let ess = ws.ess();
        if ess < WEIGHT_ESS_WARNING {
            let msg = format!("installment {i} (proposal {proposal}): weight ESS {ess:.2} < {WEIGHT_ESS_WARNING}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let idx = ws.resample_indices(n_keep, rng);
        parts.push(ws.draws.select_rows(&idx));
        installments.push(InstallmentReport {
            proposal,
            candidates: n_cand,
            resampled: n_keep,
            weight_ess: ess,
            max_weight: ws.max_weight(),
            max_log_weight: ws.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            log_bound: ws.log_bound,
        });
    }
    let values = Matrix::vstack(&parts)?.head(r);
    let samples = SampleSet { values, label: "nap".into(), shard: None, diagnostics: ChainDiagnostics::default() };
    Ok(NapSirOutput { samples, installments, warnings })
}
