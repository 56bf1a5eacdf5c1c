use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training failed at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },

    #[error("unsupported dimension {dim}: coupling layers need at least 2 dimensions")]
    UnsupportedDimension { dim: usize },

    #[error("malformed flow blob at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("chain {chain} could not find a finite starting point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },

    #[error("sampler diagnostics: {0}")]
    Diagnostics(String),

    #[error("cannot split {n} rows into {k} shards")]
    Partition { n: usize, k: usize },

    #[error("all importance weights are zero (installment {installment}, proposal {proposal})")]
    DegenerateWeights { installment: usize, proposal: usize },

    #[error("importance log-weight {log_weight} exceeds bound {bound} (proposal {proposal}, draw {draw})")]
    BoundViolation { proposal: usize, draw: usize, log_weight: f64, bound: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stage `{stage}` failed (shard {shard:?}, seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        shard: Option<usize>,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
