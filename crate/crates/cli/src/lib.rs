//! Batch verification driver: loads a TOML config, builds (or loads cached)
//! kernels, runs named suites and assembles a JSON report.

pub mod config;
pub mod context;
pub mod oracle;
pub mod report;
pub mod sample;
pub mod suites;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{LoadedConfig, VerificationConfig};
pub use report::{Record, Report, SuiteReport};

/// Every error the driver can raise. All of them map to exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] timeslice_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub order: Option<usize>,
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

/// Run `suite` (or every suite listed in the config for `all`) and return the
/// complete report. Nothing is returned on error, so a failing precondition
/// never yields a partial report.
pub fn run(loaded: &LoadedConfig, suite: &str, opts: &RunOptions) -> Result<Report, CliError> {
    let names: Vec<String> = if suite == "all" {
        loaded.config.suites.clone()
    } else {
        vec![suite.to_string()]
    };
    for name in &names {
        if !suites::NAMES.contains(&name.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown suite '{name}'; expected one of: all, {}",
                suites::NAMES.join(", ")
            )));
        }
    }
    let ctx = context::Context::new(loaded, opts)?;
    let mut out = Vec::with_capacity(names.len());
    for name in &names {
        out.push(suites::run_suite(&ctx, name)?);
    }
    Ok(Report::new(loaded.digest.clone(), out))
}
