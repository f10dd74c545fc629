//! Command-level error classification: validation failures exit 1, runtime
//! failures exit 2.

use std::fmt;

#[derive(Debug)]
pub enum AppError {
    /// Bad arguments, configs, missing files, malformed inputs, pipeline
    /// ordering violations.
    Validation(String),
    /// Failures while executing an otherwise valid command.
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 1,
            AppError::Runtime(_) => 2,
        }
    }

    pub fn validation(e: impl fmt::Display) -> Self {
        AppError::Validation(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Validation(m) => write!(f, "{m}"),
            AppError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for AppError {}

pub type AppResult<T> = Result<T, AppError>;
