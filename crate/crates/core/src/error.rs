use thiserror::Error;

/// Crate-wide error type.
///
/// The variants mirror the failure classes of the numerical operations:
/// bad parameters, degenerate (non-SPD or singular) matrices naming the
/// offending cell, and iterative solvers that ran out of budget.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate matrix in {what}{}", cell.map(|c| format!(" at cell {c}")).unwrap_or_default())]
    Degeneracy { what: String, cell: Option<usize> },

    #[error("{what} failed to converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("dimension {dim} too large for {what} (limit {limit})")]
    DimensionRefused {
        what: String,
        dim: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn degeneracy(what: impl Into<String>, cell: Option<usize>) -> Self {
        Error::Degeneracy {
            what: what.into(),
            cell,
        }
    }
}
