//! Simulation-study harness for `geomask`: synthetic scenarios, reproducible
//! seeding, fitting both models per replicate on a worker pool, and CSV/JSON
//! outputs.

pub mod commands;
pub mod config;
pub mod io;
pub mod seeds;
pub mod simulate;
pub mod study;

pub use config::StudyConfig;
pub use study::{run_study, RunManifest, StudySummary};
