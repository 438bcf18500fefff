use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the toolkit's numeric and symbolic layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("box has no dimension of positive width")]
    DegenerateBox,
    #[error("domain violation: {0}")]
    DomainViolation(&'static str),
    #[error("non-smooth operation ({0}) on a differentiation path")]
    NonSmooth(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("iteration limit reached in {0}")]
    IterationLimit(&'static str),
    #[error("degenerate ellipse (L = {0})")]
    DegenerateEllipse(f64),
    #[error("safety filter infeasible at step {step} (state {state:?})")]
    FilterInfeasible { step: usize, state: Vec<f64> },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Formula parse failure, positioned at a 1-based line and column.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
