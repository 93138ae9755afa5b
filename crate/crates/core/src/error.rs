use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix data has {len} elements but {rows}x{cols} requires {}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("NaN encountered in {context}")]
    NaN { context: String },

    #[error("non-finite value in block (row block {row_block}, column block {col_block})")]
    NonFiniteBlock { row_block: usize, col_block: usize },

    #[error("dropout probability {0} outside the valid range [0,1)")]
    InvalidDropout(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("SRAM capacity M={capacity} too small: {reason}; minimum feasible M is {min_feasible}")]
    CapacityTooSmall {
        capacity: usize,
        min_feasible: usize,
        reason: String,
    },

    #[error("SRAM residency {resident} exceeds ceiling {ceiling} (M={capacity})")]
    CapacityViolation {
        resident: u64,
        ceiling: u64,
        capacity: usize,
    },

    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("block mask mismatch: {0}")]
    BlockMaskMismatch(String),

    #[error("sparsity {0} outside [0,1]")]
    InvalidSparsity(f64),

    #[error("unknown algorithm id `{0}`")]
    UnknownAlgo(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
