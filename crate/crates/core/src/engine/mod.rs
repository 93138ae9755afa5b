//! Tiled attention kernels executed against the counted memory model.

mod backward;
mod block_mask;
mod forward;
mod plan;

pub use backward::{blocksparse_backward, flash_backward};
pub use block_mask::{make_block_mask, BlockMask, BlockMaskKind};
pub use forward::{
    blocksparse_forward, flash_forward, flash_forward_scheduled, FlashSaved, Observer, OuterSnapshot,
};
pub use plan::{
    min_feasible_capacity, next_feasible_capacity, plan_tiles, TileOverrides, TilePlan, BACKWARD_SLACK,
    FORWARD_SLACK,
};
