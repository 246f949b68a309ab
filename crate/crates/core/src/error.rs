use serde::Serialize;
use thiserror::Error;

/// One failed geometric check, with the quantity that failed it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl ValidationIssue {
    pub fn new(code: &str, message: impl Into<String>, value: Option<f64>) -> Self {
        ValidationIssue { code: code.to_string(), message: message.into(), value }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {}", summarize(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("endpoint snapping failed: {0}")]
    Resolution(String),
    #[error("target not reached by the front: {0}")]
    Unreachable(String),
    #[error("backtracking stalled at step {step} (u = {value})")]
    BacktrackStall { step: usize, value: f64 },
    #[error("backtracking exceeded {max_steps} steps")]
    BacktrackDivergence { max_steps: usize },
    #[error("cannot close contour: {0}")]
    Closure(String),
    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),
    #[error("compute budget exhausted")]
    Deadline,
    #[error("internal error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("format error: {0}")]
    Format(String),
}

fn summarize(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| i.code.as_str()).collect::<Vec<_>>().join(", ")
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> String {
        match self {
            Error::Domain(_) => "domain".into(),
            Error::Config(_) => "config.invalid".into(),
            Error::Validation(issues) => issues
                .first()
                .map(|i| i.code.clone())
                .unwrap_or_else(|| "validation".into()),
            Error::Resolution(_) => "endpoint.resolution".into(),
            Error::Unreachable(_) => "unreachable_target".into(),
            Error::BacktrackStall { .. } => "backtrack.stall".into(),
            Error::BacktrackDivergence { .. } => "backtrack.divergence".into(),
            Error::Closure(_) => "contour.closure".into(),
            Error::NoConvergence(_) => "solver.no_convergence".into(),
            Error::Deadline => "deadline_exceeded".into(),
            Error::Internal(_) => "internal".into(),
            Error::Io(_) => "io".into(),
            Error::Image(_) => "image.decode".into(),
            Error::Format(_) => "format".into(),
        }
    }

    /// True for failures caused by user input rather than by the solver.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Config(_) | Error::Validation(_) | Error::Format(_) | Error::Image(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
