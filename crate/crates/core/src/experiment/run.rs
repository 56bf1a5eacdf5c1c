use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use crate::aggregate::{consensus_merge, nap_sir, parametric_merge, SubposteriorEnsemble};
use crate::error::{Error, Result};
use crate::flow::{fit_with_report, FitReport};
use crate::linalg::Matrix;
use crate::metrics::{communication_report, CommunicationReport, MetricsReport};
use crate::models::{generate, shard, subposterior, Dataset};
use crate::rng::{child_seed, stream, Stage};
use crate::sampler::{sample, SampleSet};

/// Output of one worker: its subposterior draws and the serialized flow fitted to them.
#[derive(Debug, Clone)]
pub struct ShardArtifacts {
    pub samples: SampleSet,
    pub blob: Vec<u8>,
    pub fit: FitReport,
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: Method,
    pub samples: SampleSet,
    pub metrics: MetricsReport,
    pub warnings: Vec<String>,
}

/// Everything a run produces; all of it is a function of the config.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub data: Dataset,
    pub shards: Vec<ShardArtifacts>,
    pub ground_truth: SampleSet,
    pub methods: Vec<MethodOutput>,
    pub communication: CommunicationReport,
    /// `(stage, seconds)`.
    pub timings: Vec<(String, f64)>,
}

impl RunArtifacts {
    pub fn method(&self, m: Method) -> Option<&MethodOutput> {
        self.methods.iter().find(|o| o.method == m)
    }
}

fn at<T>(stage: &'static str, shard: Option<usize>, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage, shard, seed, source: Box::new(e) })
}

fn timed<T>(timings: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    out
}

/// generate → shard → per-shard MCMC and flow fit (parallel) → serialize →
/// aggregate per method → centralized ground truth → metrics.
///
/// Deterministic given the config: every random stream is derived from
/// `cfg.seed` by stage and index, and parallel results are merged in index order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let seed = cfg.seed;
    at("config", None, seed, cfg.validate())?;
    let spec = cfg.resolved_model();
    let data_seed = cfg.data_seed();
    let mut timings = Vec::new();

    let data = timed(&mut timings, "generate", || at("generate", None, seed, generate(&spec, cfg.n, &mut stream(data_seed, Stage::Data, 0))))?;
    let parts = timed(&mut timings, "shard", || {
        at("shard", None, seed, shard(&data, cfg.k, child_seed(data_seed, Stage::Partition, 0), &mut stream(data_seed, Stage::Partition, 0)))
    })?;

    // Workers see only their own shard; their single export is the blob.
    let (shards, ground_truth) = timed(&mut timings, "workers", || {
        let workers = || {
            parts
                .shards
                .par_iter()
                .enumerate()
                .map(|(k, part)| run_worker(cfg, &spec, part, k))
                .collect::<Result<Vec<_>>>()
        };
        let truth = || {
            let gt_seed = child_seed(seed, Stage::GroundTruth, 0);
            let target = at("ground_truth", None, seed, subposterior(&spec, &data, 1))?;
            let mut s = at("ground_truth", None, seed, sample(&target, &cfg.mcmc_config(gt_seed)))?;
            s.label = "ground_truth".into();
            Ok::<_, Error>(s)
        };
        let (w, t) = rayon::join(workers, truth);
        Ok((w?, t?))
    })?;

    let blob_lens: Vec<usize> = shards.iter().map(|s| s.blob.len()).collect();
    let communication = communication_report(&blob_lens, cfg.s, spec.dim());
    let sets: Vec<&Matrix> = shards.iter().map(|s| &s.samples.values).collect();
    let d = spec.dim();

    let mut methods = Vec::new();
    for &method in &cfg.methods {
        let (samples, warnings, ess, bytes) = timed(&mut timings, &format!("aggregate_{}", method.name()), || match method {
            Method::Nap => {
                let blobs: Vec<&[u8]> = shards.iter().map(|s| s.blob.as_slice()).collect();
                let ens = at("aggregate_nap", None, seed, SubposteriorEnsemble::from_blobs(&blobs))?;
                let mut rng = stream(seed, Stage::Aggregate, 0);
                let out = at("aggregate_nap", None, seed, nap_sir(&ens, cfg.candidates(), cfg.r, cfg.nap_mode, &mut rng))?;
                let ess = out.weight_ess();
                Ok((out.samples, out.warnings, Some(ess), ens.ingested_bytes()))
            }
            Method::Param => {
                let mut rng = stream(seed, Stage::Baseline, 0);
                let out = at("aggregate_param", None, seed, parametric_merge(&sets, cfg.r, &mut rng))?;
                // Each worker ships a mean and a full covariance.
                Ok((out.samples, out.warnings, None, cfg.k * (d + d * d) * 8))
            }
            Method::Consensus => {
                let mut out = at("aggregate_consensus", None, seed, consensus_merge(&sets))?;
                out.samples.values = out.samples.values.head(cfg.r);
                Ok((out.samples, out.warnings, None, communication.sample_bytes))
            }
        })?;
        let mut metrics = at("metrics", None, seed, MetricsReport::compute(method.name(), &samples.values, &ground_truth.values))?;
        metrics.weight_ess = ess;
        metrics.bytes_communicated = bytes;
        methods.push(MethodOutput { method, samples, metrics, warnings });
    }
    for m in &mut methods {
        m.metrics.wall_times = timings.clone();
    }

    Ok(RunArtifacts {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        data,
        shards,
        ground_truth,
        methods,
        communication,
        timings,
    })
}

fn run_worker(cfg: &ExperimentConfig, spec: &crate::models::ModelSpec, part: &Dataset, k: usize) -> Result<ShardArtifacts> {
    let seed = cfg.seed;
    let target = at("mcmc", Some(k), seed, subposterior(spec, part, cfg.k))?;
    let mut samples = at("mcmc", Some(k), seed, sample(&target, &cfg.mcmc_config(child_seed(seed, Stage::Mcmc, k as u64))))?;
    samples.shard = Some(k);
    samples.label = format!("shard_{k}");
    let train = cfg.train_config(child_seed(seed, Stage::Fit, k as u64));
    let (flow, fit) = at("fit", Some(k), seed, fit_with_report(&samples.values, &cfg.flow_arch(), &train))?;
    log::info!(
        "shard {k}: acceptance {:.2}, flow NLL {:.3} -> {:.3}",
        samples.diagnostics.acceptance.iter().sum::<f64>() / samples.diagnostics.acceptance.len() as f64,
        fit.initial_nll(),
        fit.selected_nll()
    );
    Ok(ShardArtifacts { samples, blob: flow.to_bytes(), fit })
}
