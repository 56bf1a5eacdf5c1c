use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::NapMode;
use crate::error::{Error, Result};
use crate::flow::{FlowArch, TrainConfig};
use crate::models::ModelSpec;
use crate::sampler::{Algorithm, McmcConfig};

/// Aggregation method compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nap,
    Param,
    Consensus,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nap => "nap",
            Method::Param => "param",
            Method::Consensus => "consensus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub n_layers: usize,
    pub hidden: Vec<usize>,
}

impl Default for FlowSection {
    fn default() -> Self {
        let a = FlowArch::default();
        FlowSection { n_layers: a.n_layers, hidden: a.hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection { iterations: t.iterations, learning_rate: t.learning_rate, batch_size: t.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: usize,
    /// Warmup iterations per chain; defaults to the per-chain draw count.
    pub warmup: Option<usize>,
    pub algorithm: Algorithm,
    pub init_radius: f64,
    pub thin: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection { chains: 4, warmup: None, algorithm: Algorithm::Rwm, init_radius: 2.0, thin: 1 }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Nap, Method::Param, Method::Consensus]
}

fn default_nap_mode() -> NapMode {
    NapMode::Installments
}

/// One experiment: model, data size, sharding, sampler, flow and aggregation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Observations `N`.
    pub n: usize,
    /// Shards `K`.
    pub k: usize,
    /// Draws per subposterior `S`, also used for the ground-truth run.
    pub s: usize,
    /// Aggregated draws `R` per method.
    pub r: usize,
    /// NAP candidates `T`; defaults to `4R`.
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Seed for data generation and sharding; `seed` when absent. Fixing it
    /// while varying `seed` repeats the Monte Carlo on identical shards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_nap_mode")]
    pub nap_mode: NapMode,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config types serialize")
    }

    /// `T`, defaulting to `4R`.
    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn candidates(&self) -> usize {
        self.t.unwrap_or(4 * self.r)
    }

    /// Model with experiment-dependent fields filled in.
    pub fn resolved_model(&self) -> ModelSpec {
        self.model.resolved(self.k)
    }

    pub fn flow_arch(&self) -> FlowArch {
        FlowArch::new(self.flow.n_layers, self.flow.hidden.clone())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            seed,
        }
    }

    pub fn mcmc_config(&self, seed: u64) -> McmcConfig {
        let mut c = McmcConfig::new(self.s, self.sampler.chains, self.sampler.algorithm, seed);
        if let Some(w) = self.sampler.warmup {
            c.n_warmup = w;
        }
        c.init_radius = self.sampler.init_radius;
        c.thin = self.sampler.thin;
        c
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.n < self.k {
            return bad(format!("need N ≥ K ≥ 1, got N = {}, K = {}", self.n, self.k));
        }
        if self.r == 0 || self.candidates() < self.r {
            return bad(format!("need T ≥ R ≥ 1, got T = {}, R = {}", self.candidates(), self.r));
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods contain duplicates".into());
        }
        if let NapMode::Single(p) = self.nap_mode {
            if p >= self.k {
                return bad(format!("nap_mode proposal {p} out of range for K = {}", self.k));
            }
        }
        self.resolved_model().validate().or_else(|e| bad(e.to_string()))?;
        let d = self.model.dim();
        if d < 2 {
            return bad(format!("flows need a parameter dimension of at least 2, model has {d}"));
        }
        if self.s <= d {
            return bad(format!("S = {} must exceed the parameter dimension {d}", self.s));
        }
        if self.methods.contains(&Method::Consensus) && self.r > self.s {
            return bad(format!("consensus produces S = {} draws, fewer than R = {}", self.s, self.r));
        }
        if self.flow.n_layers == 0 || self.flow.hidden.is_empty() || self.flow.hidden.contains(&0) {
            return bad("flow needs at least one layer and nonzero hidden widths".into());
        }
        self.train_config(0).validate()?;
        self.mcmc_config(0).validate()?;
        Ok(())
    }
}
