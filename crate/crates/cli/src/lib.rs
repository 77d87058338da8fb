//! Experiment runner for the `seqopt` command: configuration, the oracle and
//! proxy-finetune training loops, the horizon ablation, the twin-landscape
//! mismatch study and candidate-set evaluation.

pub mod config;
pub mod evaluate;
pub mod experiments;
pub mod report;
pub mod runner;

pub use config::{Mode, OracleSpec, Overrides, RunConfig};
pub use experiments::{run, run_ablation, run_mismatch, AblationReport, MismatchReport, RunReport};
