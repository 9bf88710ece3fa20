//! Process exit codes and one-line diagnostics.

use std::process::ExitCode;

use covsearch::error::Error;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const SCORER: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: DATA,
            message: message.into(),
        }
    }

    pub fn scorer(message: impl Into<String>) -> Self {
        Failure {
            code: SCORER,
            message: message.into(),
        }
    }

    /// For errors raised while validating flags or configuration values.
    pub fn usage_from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::usage(m),
            other => other.into(),
        }
    }

    pub fn report(self) -> ExitCode {
        let line = self.message.replace('\n', " ");
        eprintln!("covsearch: {line}");
        ExitCode::from(self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Scorer(_) | Error::RerankAborted { .. } => SCORER,
            Error::InvalidArgument(_) => USAGE,
            _ => DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
