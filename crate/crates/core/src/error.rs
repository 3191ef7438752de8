//! Error taxonomy shared across the crate.
//!
//! Variants map onto the CLI exit codes: configuration/usage problems exit
//! with 1, data problems (parse failures, malformed files, join mismatches)
//! with 2, and numeric failures (divergence, non-finite values) with 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// A delimited input file failed to parse; `line` is the physical line
    /// number in the file (the header is line 1).
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Structurally valid input that violates a data contract.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or divergence during numeric work.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(line: u64, msg: impl Into<String>) -> Self {
        Error::Parse { line, message: msg.into() }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(Error::config("x").exit_code(), 1);
        assert_eq!(Error::parse(3, "bad row").exit_code(), 2);
        assert_eq!(Error::data("mismatch").exit_code(), 2);
        assert_eq!(Error::numeric("nan").exit_code(), 3);
    }
}
