//! HBM/SRAM accounting, closed-form IO predictions and the FLOP model.

mod flops;
mod memory;
mod predict;

use serde::Serialize;

pub use flops::{flop_model, standard_backward_flops, standard_forward_flops, Algo};
pub use memory::{AccessCounter, MemoryModel};
pub use predict::{
    blocksparse_forward_fixed_io, predict_blocksparse_backward_io,
    predict_blocksparse_backward_io_for_mask, predict_blocksparse_forward_io_for_mask,
    predict_blocksparse_io, predict_flash_backward_io, predict_flash_forward_io,
    predict_standard_backward_io, predict_standard_forward_io, FormulaId, IoPrediction,
};

/// Traffic converted to bytes, optionally scaled by a batch*heads multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ByteReport {
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub total_bytes: u64,
}

impl ByteReport {
    pub fn gigabytes(&self) -> f64 {
        self.total_bytes as f64 / 1e9
    }
}

pub fn byte_report(counter: &AccessCounter, element_bytes: u64, multiplier: u64) -> ByteReport {
    let read_bytes = counter.hbm_read_elems * element_bytes * multiplier;
    let write_bytes = counter.hbm_write_elems * element_bytes * multiplier;
    ByteReport { read_bytes, write_bytes, total_bytes: read_bytes + write_bytes }
}
