use std::io;
use std::path::Path;

use cmms_core::policy::PolicyError;
use cmms_core::protocol::CodecError;
use cmms_core::session::SessionError;
use cmms_core::sim::{SimError, TraceError};
use cmms_core::ErrorCode;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// An error with a catalog code. The CLI prints it as `E_CODE: detail`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct Error {
    pub code: ErrorCode,
    pub detail: String,
}

impl Error {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        Self::new(ErrorCode::Io, format!("{}: {err}", path.display()))
    }

    pub fn schema(path: &Path, detail: impl std::fmt::Display) -> Self {
        Self::new(ErrorCode::Schema, format!("{}: {detail}", path.display()))
    }

    /// Prefixes the detail, keeping the code.
    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.detail = format!("{what}: {}", self.detail);
        self
    }
}

impl From<PolicyError> for Error {
    fn from(e: PolicyError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<SessionError> for Error {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Protocol { code, detail } => Self::new(code, detail),
            SessionError::Sim(e) => e.into(),
        }
    }
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<TraceError> for Error {
    fn from(e: TraceError) -> Self {
        Self::new(e.code, format!("line {}: {}", e.line, e.detail))
    }
}

impl From<CodecError> for Error {
    fn from(e: CodecError) -> Self {
        Self::new(e.code, e.detail)
    }
}
