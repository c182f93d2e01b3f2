//! Campaign plumbing behind the `cvsense` binary: TOML campaign configs,
//! NDJSON trace files with a leading meta record, run manifests, landscape
//! grids, and trace summaries. The field names and conventions of every
//! emitted file are frozen in docs/format.md.

pub mod campaign;
pub mod config;
pub mod summary;

use std::io;

use thiserror::Error;

/// Trace and manifest schema version, bumped on breaking changes to the
/// emitted field set. Parsers accept any minor revision of a known major.
pub const SCHEMA_VERSION: &str = "1.0";

pub const SCHEMA_MAJOR: u64 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("trace: {0}")]
    Trace(String),
    #[error("trace record: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Bench(#[from] cvsense::bench::BenchError),
    #[error(transparent)]
    Optimize(#[from] cvsense::optimize::OptimizeError),
    #[error(transparent)]
    Fisher(#[from] cvsense::fisher::FisherError),
    #[error("optimizer aborted: {0}")]
    Aborted(String),
}

impl CliError {
    /// 1 for rejected inputs (config or trace files), 2 for failures
    /// while executing a campaign.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Toml(_) | CliError::Trace(_) | CliError::Json(_) => 1,
            _ => 2,
        }
    }
}

/// Splits a schema version string and checks the major against the
/// parser's supported major.
pub fn check_schema_version(version: &str) -> Result<(), CliError> {
    let major = version
        .split('.')
        .next()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| CliError::Trace(format!("unparseable schema version {version:?}")))?;
    if major != SCHEMA_MAJOR {
        return Err(CliError::Trace(format!(
            "unsupported schema major version {major} (supported: {SCHEMA_MAJOR})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_major_gate_accepts_minor_revisions_only() {
        assert!(check_schema_version("1.0").is_ok());
        assert!(check_schema_version("1.7").is_ok());
        assert!(check_schema_version("2.0").is_err());
        assert!(check_schema_version("0.9").is_err());
        assert!(check_schema_version("garbage").is_err());
        assert!(check_schema_version(SCHEMA_VERSION).is_ok());
    }
}
