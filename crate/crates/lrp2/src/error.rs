//! Error type shared across the toolkit.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the toolkit.
///
/// The variants mirror the failure classes of the public operations:
/// configuration problems are distinguished from bad inputs, malformed
/// files, and numeric breakdowns so callers (notably the CLI) can map
/// them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (model geometry, layer bounds, pool caps, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid runtime input (token ids, positions, empty collections, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A file is not in the expected container format (magic, version).
    #[error("format error: {0}")]
    Format(String),

    /// A file parses but its contents are inconsistent (shapes, non-finite
    /// payloads, manifest mismatches).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A dataset record violates its schema.
    #[error("validation error: {0}")]
    Validation(String),

    /// Parallel corpus sides disagree.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A numeric quantity degenerated (zero norms, non-finite values).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A candidate score is unusable (NaN).
    #[error("scoring error: {0}")]
    Scoring(String),

    /// Training produced a non-finite loss.
    #[error("divergence error: {0}")]
    Divergence(String),

    /// A persisted report carries an unknown schema version.
    #[error("version error: {0}")]
    Version(String),

    /// Report assembly failed (missing metadata and the like).
    #[error("report error: {0}")]
    Report(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether this error reflects a usage/configuration mistake rather
    /// than a runtime failure. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
