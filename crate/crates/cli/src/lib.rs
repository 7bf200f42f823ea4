//! Command-line front end for `pguide-core`: JSON run configs, task
//! composition, metrics, ablation sweeps and the acceptance suite.

pub mod ablate;
pub mod config;
pub mod fixtures;
pub mod metrics;
pub mod run;
pub mod task;
pub mod verify;

pub use ablate::{ablate, AblationReport, Axis};
pub use config::{ColorTarget, OutputSpec, RunConfig, SamplerSection, TaskSpec};
pub use metrics::MetricsReport;
pub use run::{execute, run, run_file, Overrides, RunOutcome};
pub use verify::{verify, VerifyReport};
