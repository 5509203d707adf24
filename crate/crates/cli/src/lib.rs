//! Experiment runner for the federated sparse learning toolkit: binds
//! config files to dataset generation, algorithm execution, sweeps, and
//! theory reports.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_compare, cmd_generate, cmd_run, cmd_theory, load_dataset, rounds_to_target, trace_csv,
    CompareArtifacts, LoadedData, RunArtifacts, SweepPoint, TheoryArtifacts, TRACE_HEADER,
};
pub use config::{DatasetConfig, ExperimentConfig, LibsvmConfig, LibsvmTask, ModelConfig};
