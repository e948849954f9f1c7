use thiserror::Error;

/// Errors raised by model evaluation, certification and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point is already misclassified")]
    AlreadyMisclassified,
    #[error("no valid threshold on coordinate {0}")]
    NoValidThreshold(usize),
    #[error("reachable set is empty")]
    EmptyReachableSet,
    #[error("oracle would enumerate {0} cells (limit {1})")]
    TooManyCells(u128, u128),
    #[error("class {0} is not part of the model")]
    UnknownClass(i64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), ModelError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            expected,
            found: x.len(),
        })
    }
}
