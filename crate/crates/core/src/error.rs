use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("label row {row} is not on the probability simplex (row sum {sum})")]
    NonSimplexLabels { row: usize, sum: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("numerical failure at iteration {iteration}: {what}")]
    NumericalFailure { iteration: usize, what: String },

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("dataset has no labels")]
    Unlabeled,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(
    op: &'static str,
    expected: impl Into<String>,
    found: impl Into<String>,
) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.into(),
        found: found.into(),
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}
