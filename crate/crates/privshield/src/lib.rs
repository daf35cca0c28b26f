//! File formats, experiment configuration and the command line around
//! `privshield-core`.
//!
//! Every subcommand of the `privshield` binary is a function in [`runner`]
//! (or [`report`]), so experiments can also be driven from code.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod stats;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
