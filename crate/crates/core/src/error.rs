use thiserror::Error;

/// Errors raised while building, fitting or evaluating transport maps.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input{}: {message}", location(*.row, *.column))]
    Input {
        row: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("quadrature did not reach tolerance (error estimate {estimate:e} after {intervals} intervals)")]
    Quadrature { estimate: f64, intervals: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("map inversion failed: {0}")]
    Inversion(String),
}

fn location(row: Option<usize>, column: Option<usize>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" at column {c}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn input(message: impl Into<String>) -> Self {
        Error::Input {
            row: None,
            column: None,
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. } | Error::Numerical(_) | Error::Inversion(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
