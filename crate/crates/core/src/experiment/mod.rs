//! End-to-end experiment driver: configuration, the run pipeline, output
//! files and parameter sweeps.

mod config;
mod output;
mod run;
mod sweep;

pub use config::{ExperimentConfig, FlowSection, Method, SamplerSection, TrainSection};
pub use output::{emit_results, metrics_records, scatter_svg, METRICS_COLUMNS};
pub use run::{run_experiment, MethodOutput, RunArtifacts, ShardArtifacts};
pub use sweep::{apply_axis, repeat_seed, sweep, write_sweep_csv, SweepAxis, SweepResult, SweepRow};
