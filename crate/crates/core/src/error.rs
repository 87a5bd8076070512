//! Error types shared across the crate.
//!
//! Every error carries a stable machine-readable code so the CLI can emit
//! structured error JSON and map failures onto exit classes (config, data,
//! numeric).

use thiserror::Error;

/// Broad class a failure belongs to, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or invalid arguments (exit 1).
    Config,
    /// Missing, malformed, or inconsistent data (exit 2).
    Data,
    /// Numerical divergence or non-finite values (exit 3).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dataset root does not exist or is not a directory: {0}")]
    MissingRoot(String),

    #[error("domain directory contains no class subdirectories: {0}")]
    EmptyDomain(String),

    #[error("unreadable file or directory entry: {0}")]
    UnreadableFile(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable code string for machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::MissingRoot(_) => "missing_root",
            Error::EmptyDomain(_) => "empty_domain",
            Error::UnreadableFile(_) => "unreadable_file",
            Error::Data(_) => "data",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric_divergence",
            Error::Backend(_) => "backend",
            Error::Archive(_) => "archive",
            Error::Io(_) => "io",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
