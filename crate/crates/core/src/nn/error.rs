use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("backward requires a scalar loss, got a node of length {len}")]
    NonScalarLoss { len: usize },
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
