use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank {rank} out of range: must satisfy 1 <= rank <= {bound}")]
    RankTooLarge { rank: usize, bound: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is numerically singular: singular value #{index} = {value:e} (largest {largest:e})")]
    Singular {
        index: usize,
        value: f64,
        largest: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
