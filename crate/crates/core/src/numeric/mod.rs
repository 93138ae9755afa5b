//! Dense matrices, stable softmax with mergeable statistics, and the
//! counter-based dropout stream.

mod config;
mod dropout;
mod matrix;
pub mod serialize;
mod softmax;

pub use config::{AttnConfig, ElementMask, MaskSpec};
pub use dropout::{dropout_scale, Dropout, DropoutRng};
pub use matrix::{dot, matmul, matmul_nt, matmul_tn, Matrix};
pub use softmax::{merge_weighted, shifted_exp, stable_softmax_row, RowStats, SoftmaxStats};
