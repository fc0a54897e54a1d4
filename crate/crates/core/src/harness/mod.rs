//! Experiment configuration, execution and reporting.

mod config;
pub mod oracle;
mod report;
mod runner;

pub use config::*;
pub use report::*;
pub use runner::*;
