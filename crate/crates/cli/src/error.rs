use infoflow_core::protocol::DecodeError;
use infoflow_core::workbook::{GatewayError, WorkbookError};

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Validation = 2,
    Server = 3,
    Data = 4,
}

/// A failure reported as `error: code=... message=...` on stderr.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("error: code={code} message={message}")]
pub struct CliError {
    pub exit: Exit,
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, code: impl Into<String>, message: impl ToString) -> Self {
        CliError {
            exit,
            code: code.into(),
            message: message.to_string().replace('\n', " "),
        }
    }

    pub fn data(code: impl Into<String>, message: impl ToString) -> Self {
        CliError::new(Exit::Data, code, message)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        let message = match &e {
            GatewayError::Server { message, .. } => message.clone(),
            other => other.to_string(),
        };
        CliError::new(Exit::Server, e.code(), message)
    }
}

impl From<WorkbookError> for CliError {
    fn from(e: WorkbookError) -> Self {
        match e {
            WorkbookError::Server(g) => g.into(),
            other => CliError::data(other.code().to_string(), other),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        CliError::new(Exit::Server, "protocol", e)
    }
}
