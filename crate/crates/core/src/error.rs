use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("row {row} is not a valid pmf (sum {sum}, min {min})")]
    InvalidPmf { row: usize, sum: f64, min: f64 },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("non-finite {stage} loss, update aborted")]
    Diverged { stage: &'static str },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn check_finite<T: crate::Scalar>(what: &'static str, xs: &[T]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(CoreError::NonFinite { what, index }),
        None => Ok(()),
    }
}
