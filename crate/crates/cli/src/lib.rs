//! File formats, configuration and experiment pipelines behind the
//! `trialcmdp` command-line tool.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod reproduce;
pub mod selftest;

pub use error::{CliError, Result};
