use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown variable `{name}` at line {line}, column {column}")]
    UnknownVariable {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("domain error in component {component}: {message}")]
    Domain { component: usize, message: String },

    #[error("`{function}` is not differentiable at 0 (component {component})")]
    NonDifferentiable {
        component: usize,
        function: &'static str,
    },

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not linearly open at this point (cov = 0); a continuous stabilizing feedback cannot be built from the linearization here")]
    NotLinearlyOpen,

    #[error("point is outside the control domain: {0}")]
    OutOfDomain(String),

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
