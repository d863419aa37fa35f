use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside an operation's domain (shape mismatch, bad mode, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("resource error: {0}")]
    Resource(String),

    /// A caller broke an operation's precondition (e.g. used a stale PP state).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("bitstream error at byte {offset}: {reason}")]
    Bitstream { offset: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported format in {}: {reason}", path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("external tool `{command}` failed ({status}): {diagnostics}")]
    ExternalTool {
        command: String,
        status: String,
        diagnostics: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn bitstream(offset: usize, reason: impl Into<String>) -> Self {
        Error::Bitstream {
            offset,
            reason: reason.into(),
        }
    }

    /// Short category name, also used to pick the CLI exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Convergence(_) => "convergence",
            Error::Resource(_) => "resource",
            Error::Contract(_) => "contract",
            Error::Bitstream { .. } => "bitstream",
            Error::Format(_) => "format",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::UnsupportedFormat { .. } => "unsupported-format",
            Error::ExternalTool { .. } => "external-tool",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 3,
            Error::Convergence(_) | Error::Resource(_) | Error::Contract(_) => 4,
            Error::Bitstream { .. }
            | Error::Format(_)
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedFormat { .. } => 5,
            Error::ExternalTool { .. } => 6,
            Error::Io(_) => 7,
        }
    }
}
