use core::fmt;

use serde::{Deserialize, Serialize};

/// Stable error codes shared by the wire protocol, the node behaviors and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "E_PARSE")]
    Parse,
    #[serde(rename = "E_RANGE")]
    Range,
    #[serde(rename = "E_DUP")]
    Dup,
    #[serde(rename = "E_DUP_STATE")]
    DupState,
    #[serde(rename = "E_CONFIG")]
    Config,
    #[serde(rename = "E_DUPLICATE_SUBJECT")]
    DuplicateSubject,
    #[serde(rename = "E_UNKNOWN_SUBJECT")]
    UnknownSubject,
    #[serde(rename = "E_NOT_FOUND")]
    NotFound,
    #[serde(rename = "E_INVALID_CERT")]
    InvalidCert,
    #[serde(rename = "E_INVALID")]
    Invalid,
    #[serde(rename = "E_SCHEMA")]
    Schema,
    #[serde(rename = "E_UNKNOWN_TYPE")]
    UnknownType,
    #[serde(rename = "E_VERSION")]
    Version,
    #[serde(rename = "E_AUTH")]
    Auth,
    #[serde(rename = "E_CERT")]
    Cert,
    #[serde(rename = "E_BAD_PEER_CERT")]
    BadPeerCert,
    #[serde(rename = "E_NO_NODE")]
    NoNode,
    #[serde(rename = "E_NO_SESSION")]
    NoSession,
    #[serde(rename = "E_NOT_AUTHORIZED")]
    NotAuthorized,
    #[serde(rename = "E_UNEXPECTED")]
    Unexpected,
    #[serde(rename = "E_UNREACHABLE")]
    Unreachable,
    #[serde(rename = "E_TICK_LIMIT")]
    TickLimit,
    #[serde(rename = "E_IO")]
    Io,
    #[serde(rename = "E_CONN")]
    Conn,
    #[serde(rename = "E_EXISTS")]
    Exists,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 25] = [
        ErrorCode::Parse,
        ErrorCode::Range,
        ErrorCode::Dup,
        ErrorCode::DupState,
        ErrorCode::Config,
        ErrorCode::DuplicateSubject,
        ErrorCode::UnknownSubject,
        ErrorCode::NotFound,
        ErrorCode::InvalidCert,
        ErrorCode::Invalid,
        ErrorCode::Schema,
        ErrorCode::UnknownType,
        ErrorCode::Version,
        ErrorCode::Auth,
        ErrorCode::Cert,
        ErrorCode::BadPeerCert,
        ErrorCode::NoNode,
        ErrorCode::NoSession,
        ErrorCode::NotAuthorized,
        ErrorCode::Unexpected,
        ErrorCode::Unreachable,
        ErrorCode::TickLimit,
        ErrorCode::Io,
        ErrorCode::Conn,
        ErrorCode::Exists,
    ];

    pub fn parse(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == code)
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Parse => "E_PARSE",
            ErrorCode::Range => "E_RANGE",
            ErrorCode::Dup => "E_DUP",
            ErrorCode::DupState => "E_DUP_STATE",
            ErrorCode::Config => "E_CONFIG",
            ErrorCode::DuplicateSubject => "E_DUPLICATE_SUBJECT",
            ErrorCode::UnknownSubject => "E_UNKNOWN_SUBJECT",
            ErrorCode::NotFound => "E_NOT_FOUND",
            ErrorCode::InvalidCert => "E_INVALID_CERT",
            ErrorCode::Invalid => "E_INVALID",
            ErrorCode::Schema => "E_SCHEMA",
            ErrorCode::UnknownType => "E_UNKNOWN_TYPE",
            ErrorCode::Version => "E_VERSION",
            ErrorCode::Auth => "E_AUTH",
            ErrorCode::Cert => "E_CERT",
            ErrorCode::BadPeerCert => "E_BAD_PEER_CERT",
            ErrorCode::NoNode => "E_NO_NODE",
            ErrorCode::NoSession => "E_NO_SESSION",
            ErrorCode::NotAuthorized => "E_NOT_AUTHORIZED",
            ErrorCode::Unexpected => "E_UNEXPECTED",
            ErrorCode::Unreachable => "E_UNREACHABLE",
            ErrorCode::TickLimit => "E_TICK_LIMIT",
            ErrorCode::Io => "E_IO",
            ErrorCode::Conn => "E_CONN",
            ErrorCode::Exists => "E_EXISTS",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl PartialEq<&str> for ErrorCode {
    fn eq(&self, other: &&str) -> bool {
        self.as_str() == *other
    }
}
