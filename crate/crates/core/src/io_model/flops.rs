//! FLOP counting rules and their closed forms.
//!
//! A matrix product of shapes `(m x k) * (k x n)` costs `2mkn`. Every scalar
//! exp, div, max, add, sub or mul costs 1; masking is a selection and costs 0.
//! Counting is data-independent: masked entries and `p_drop = 0` are charged
//! like any other, so the closed forms depend only on the shapes.
//!
//! Per-algorithm charges (`r x c` block, `d` head dim):
//!
//! | algorithm | charge |
//! |---|---|
//! | standard forward | `4n^2 d + 7n^2` (QK^T, scale, max, sub, exp, sum, div, dropout, PV) |
//! | standard backward | `8n^2 d + 5n^2 + 2nd` |
//! | tiled forward, per block | `4rcd + 6rc + 8r + 4rd` |
//! | tiled backward, per block | `10rcd + 8rc + 4rd + 3cd` |

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::engine::{BlockMask, TilePlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    StandardForward,
    StandardBackward,
    FlashForward,
    FlashBackward,
    BlockSparseForward,
    BlockSparseBackward,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::StandardForward,
        Algo::StandardBackward,
        Algo::FlashForward,
        Algo::FlashBackward,
        Algo::BlockSparseForward,
        Algo::BlockSparseBackward,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algo::StandardForward => "standard",
            Algo::StandardBackward => "standard_bwd",
            Algo::FlashForward => "flash",
            Algo::FlashBackward => "flash_bwd",
            Algo::BlockSparseForward => "blocksparse",
            Algo::BlockSparseBackward => "blocksparse_bwd",
        }
    }

    pub fn is_block_sparse(&self) -> bool {
        matches!(self, Algo::BlockSparseForward | Algo::BlockSparseBackward)
    }

    pub fn is_backward(&self) -> bool {
        matches!(
            self,
            Algo::StandardBackward | Algo::FlashBackward | Algo::BlockSparseBackward
        )
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .or(match key {
                "standard_fwd" => Some(Algo::StandardForward),
                "flash_fwd" => Some(Algo::FlashForward),
                "blocksparse_fwd" => Some(Algo::BlockSparseForward),
                _ => None,
            })
            .ok_or_else(|| Error::UnknownAlgo(key.to_string()))
    }
}

pub(crate) fn forward_block_flops(r: u64, c: u64, d: u64) -> u64 {
    4 * r * c * d + 6 * r * c + 8 * r + 4 * r * d
}

pub(crate) fn backward_block_flops(r: u64, c: u64, d: u64) -> u64 {
    10 * r * c * d + 8 * r * c + 4 * r * d + 3 * c * d
}

pub fn standard_forward_flops(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    4 * n * n * d + 7 * n * n
}

pub fn standard_backward_flops(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    8 * n * n * d + 5 * n * n + 2 * n * d
}

/// Sum of `per_block(r, c)` over the blocks the algorithm visits.
fn sum_blocks(plan: &TilePlan, mask: Option<&BlockMask>, per_block: impl Fn(u64, u64) -> u64) -> u64 {
    let mut total = 0;
    for j in 0..plan.tc {
        let (c0, c1) = plan.col_block(j);
        for i in 0..plan.tr {
            if mask.is_some_and(|m| !m.is_nonzero(i, j)) {
                continue;
            }
            let (r0, r1) = plan.row_block(i);
            total += per_block((r1 - r0) as u64, (c1 - c0) as u64);
        }
    }
    total
}

/// Closed-form FLOP count of `algo`. Block-sparse algorithms need `mask`.
pub fn flop_model(
    algo: Algo,
    n: usize,
    d: usize,
    plan: &TilePlan,
    mask: Option<&BlockMask>,
) -> Result<u64> {
    let d64 = d as u64;
    let (n64, tr, tc) = (n as u64, plan.tr as u64, plan.tc as u64);
    match algo {
        Algo::StandardForward => Ok(standard_forward_flops(n, d)),
        Algo::StandardBackward => Ok(standard_backward_flops(n, d)),
        // Summing the per-block charge over a dense grid: sum rc = n^2,
        // sum r = tc n, sum c = tr n.
        Algo::FlashForward => Ok(4 * n64 * n64 * d64 + 6 * n64 * n64 + tc * (8 * n64 + 4 * n64 * d64)),
        Algo::FlashBackward => {
            Ok(10 * n64 * n64 * d64 + 8 * n64 * n64 + 4 * tc * n64 * d64 + 3 * tr * n64 * d64)
        }
        Algo::BlockSparseForward | Algo::BlockSparseBackward => {
            let mask = mask.ok_or_else(|| {
                Error::InvalidConfig(format!("{algo} FLOP model needs a block mask"))
            })?;
            let per_block = |r, c| {
                if algo == Algo::BlockSparseForward {
                    forward_block_flops(r, c, d64)
                } else {
                    backward_block_flops(r, c, d64)
                }
            };
            Ok(sum_blocks(plan, Some(mask), per_block))
        }
    }
}
