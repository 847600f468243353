//! Configuration-driven Monte Carlo sweeps over detectors and SNR points.

mod config;
mod output;
mod report;
mod results;
mod runner;

pub use config::{ChannelOverride, ChannelParams, DetectorKind, DetectorSpec, ExperimentConfig, Provision};
pub use output::{companion_paths, config_hash, run_experiment, RunMetadata};
pub use report::{report_model, ModelReport, SavedModel, SAVED_MODEL_VERSION};
pub use results::{emit_csv, parse_csv, ResultRow, SweepResult, CSV_HEADER};
pub use runner::{
    build_frame, count_errors, prepare_point, run_sweep, run_sweep_with, CsiError, FrameCounts, Prepared, Timings,
    TrialFrame,
};
