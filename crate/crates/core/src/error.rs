use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("empty axis {axis} in {op}")]
    EmptyAxis { op: &'static str, axis: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("unknown parameter `{0}`")]
    MissingParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by numerics or tensor shapes rather than data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::ShapeData { .. }
                | Error::Axis { .. }
                | Error::EmptyAxis { .. }
                | Error::NonScalarLoss(_)
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
