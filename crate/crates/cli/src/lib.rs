//! Configuration, data handling and experiment drivers for the
//! `detfree-gp` command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod output;
pub mod quadrature;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
