use std::fmt;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Io,
    Numerical,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Io => 3,
            ExitKind::Numerical => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Io, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

/// Malformed input files count as I/O failures; bad parameters as configuration errors.
pub fn classify(e: &pixmotion::Error) -> ExitKind {
    use pixmotion::Error as E;
    match e {
        _ if e.is_io() => ExitKind::Io,
        E::Parse { .. } => ExitKind::Io,
        E::InvalidParameter(_) => ExitKind::Config,
        _ => ExitKind::Numerical,
    }
}

impl From<pixmotion::Error> for CliError {
    fn from(e: pixmotion::Error) -> Self {
        Self { kind: classify(&e), message: e.to_string() }
    }
}
