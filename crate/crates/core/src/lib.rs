//! Exact tiled attention with online softmax, a recomputation-based backward
//! pass and block-sparse kernels, all running against a simulated two-level
//! memory hierarchy that counts HBM traffic, FLOPs and on-chip residency.
//!
//! ```
//! use tiled_attn::{flash_forward, plan_tiles, standard_forward, AttnConfig, Matrix, MemoryModel};
//!
//! let (n, d) = (16, 4);
//! let q = Matrix::from_fn(n, d, |i, j| ((i * d + j) as f64 * 0.37).sin());
//! let cfg = AttnConfig::new(n, d);
//! let plan = plan_tiles(n, d, 128, None).unwrap();
//! let mut mem = MemoryModel::new(128).unwrap();
//! let saved = flash_forward(&q, &q, &q, &cfg, &plan, &mut mem, None).unwrap();
//! let oracle = standard_forward(&q, &q, &q, &cfg, None).unwrap();
//! assert!(saved.o.max_abs_diff(&oracle.o).unwrap() < 1e-12);
//! ```

pub mod bench;
pub mod engine;
mod error;
pub mod io_model;
pub mod numeric;
pub mod reference;

pub use engine::{
    blocksparse_backward, blocksparse_forward, flash_backward, flash_forward, make_block_mask, plan_tiles,
    BlockMask, BlockMaskKind, FlashSaved, OuterSnapshot, TileOverrides, TilePlan,
};
pub use error::{Error, Result};
pub use io_model::{AccessCounter, Algo, IoPrediction, MemoryModel};
pub use numeric::{AttnConfig, DropoutRng, MaskSpec, Matrix, SoftmaxStats};
pub use reference::{standard_backward, standard_forward, ForwardArtifacts, Gradients};
