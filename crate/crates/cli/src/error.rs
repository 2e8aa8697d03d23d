use std::process::ExitCode;

use deckagent_core::eval::EvalError;
use deckagent_core::retrieval::RetrievalError;
use deckagent_core::{BackendError, DocumentError, KnowledgeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input files. Exit 2.
    #[error("{0}")]
    Input(String),
    /// Backend outage or other failure at run time. Exit 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }
}

pub fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

impl From<DocumentError> for CliError {
    fn from(e: DocumentError) -> Self {
        match e {
            DocumentError::Invalid { file, violations } => {
                let mut msg = format!("{} is invalid:", file.display());
                for v in violations {
                    msg.push_str(&format!("\n  {v}"));
                }
                CliError::Input(msg)
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) | BackendError::InvalidRequest(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<KnowledgeError> for CliError {
    fn from(e: KnowledgeError) -> Self {
        match e {
            KnowledgeError::Store(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Backend(b) => b.into(),
            RetrievalError::EmptyQuery | RetrievalError::InvalidK(_) | RetrievalError::Mismatch(_) => CliError::Input(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset { .. } | EvalError::EmptyDataset => CliError::Input(e.to_string()),
            EvalError::Retrieval(r) => r.into(),
            EvalError::Io(io) => CliError::Runtime(io.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
