use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix coordinate ({row}, {col}) is invalid for shape {rows}x{cols}")]
    Coordinate {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("vectorized index {index} outside 1..={len}")]
    Index { index: u64, len: u64 },
    #[error("invalid parameter: {0}")]
    Parameter(&'static str),
    #[error("{what} needs {requested} cells, cap is {cap}")]
    TooLarge {
        what: &'static str,
        requested: u64,
        cap: u64,
    },
    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("infeasible instance: {0}")]
    Infeasible(&'static str),
}
