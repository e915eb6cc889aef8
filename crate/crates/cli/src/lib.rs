//! Library surface of the srploc command-line front end: configuration,
//! pipeline orchestration, and report writing. The binary in `main.rs` is a
//! thin argument-parsing shell over these functions.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{JobConfig, Method};
pub use runner::{load_input, run_compare, run_method, MethodOutput, PipelineContext, RunError};
