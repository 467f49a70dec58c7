use std::path::Path;

use evdemosaic_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const INTERNAL: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, configuration or parameters.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, missing or inconsistent inputs.
    #[error("{0}")]
    Data(String),
    /// Divergence, non-finite values or failed numerical checks.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => exit::USAGE,
            AppError::Data(_) => exit::DATA,
            AppError::Numeric(_) => exit::NUMERIC,
            AppError::Internal(_) => exit::INTERNAL,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        AppError::Data(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with a file name, keeping the category.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            AppError::Usage(m) => AppError::Usage(format!("{p}: {m}")),
            AppError::Data(m) => AppError::Data(format!("{p}: {m}")),
            AppError::Numeric(m) => AppError::Numeric(format!("{p}: {m}")),
            AppError::Internal(m) => AppError::Internal(format!("{p}: {m}")),
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        let m = e.to_string();
        match e {
            CoreError::Param(_) => AppError::Usage(m),
            CoreError::Diverged { .. } | CoreError::NonFinite { .. } | CoreError::Domain { .. } => AppError::Numeric(m),
            CoreError::Codec { .. } | CoreError::Data(_) | CoreError::Dimension(_) | CoreError::Structure(_) => AppError::Data(m),
            CoreError::ShapeMismatch { .. } | CoreError::Shape { .. } | CoreError::Bounds { .. } | CoreError::State(_) => {
                AppError::Internal(m)
            }
        }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
