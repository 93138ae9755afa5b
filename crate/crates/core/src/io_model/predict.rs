//! Closed-form HBM traffic of every algorithm.
//!
//! These are exact integer contracts: an instrumented run of the matching
//! algorithm must charge precisely these element counts. Counting rules:
//!
//! * Standard forward: read Q, K, write S; read S, write P; read P, V, write O.
//!   Masking is fused into the S pass and dropout into the PV pass.
//! * Standard backward: read P, dO, write dV; read dO, V, write dP; read P,
//!   dP, write dS; read dS, K, write dQ; read dS, Q, write dK.
//! * Tiled forward: initialize O, l, m in HBM (writes); K_j, V_j are read once;
//!   each visited `(i, j)` block reads Q_i, O_i, l_i, m_i and writes O_i, l_i, m_i.
//! * Tiled backward: initialize dQ (write); K_j, V_j read once; each visited
//!   block reads Q_i, O_i, dO_i, dQ_i, l_i, m_i and writes dQ_i; dK_j, dV_j
//!   are written once per key block.
//!
//! Block-sparse variants are the tiled ones restricted to nonzero blocks.

use std::fmt;

use serde::Serialize;

use crate::engine::{BlockMask, TilePlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    StandardForward,
    StandardBackward,
    FlashForward,
    FlashBackward,
    BlockSparseForward,
    BlockSparseBackward,
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormulaId::StandardForward => "standard_fwd",
            FormulaId::StandardBackward => "standard_bwd",
            FormulaId::FlashForward => "flash_fwd",
            FormulaId::FlashBackward => "flash_bwd",
            FormulaId::BlockSparseForward => "blocksparse_fwd",
            FormulaId::BlockSparseBackward => "blocksparse_bwd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IoPrediction {
    pub reads: u64,
    pub writes: u64,
    pub formula_id: FormulaId,
}

impl IoPrediction {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

fn u(x: usize) -> u64 {
    x as u64
}

/// `reads = 3nd + 2n^2`, `writes = 2n^2 + nd`.
pub fn predict_standard_forward_io(n: usize, d: usize) -> IoPrediction {
    let (n, d) = (u(n), u(d));
    IoPrediction {
        reads: 3 * n * d + 2 * n * n,
        writes: 2 * n * n + n * d,
        formula_id: FormulaId::StandardForward,
    }
}

/// `reads = 5n^2 + 5nd`, `writes = 2n^2 + 3nd`.
pub fn predict_standard_backward_io(n: usize, d: usize) -> IoPrediction {
    let (n, d) = (u(n), u(d));
    IoPrediction {
        reads: 5 * n * n + 5 * n * d,
        writes: 2 * n * n + 3 * n * d,
        formula_id: FormulaId::StandardBackward,
    }
}

/// One-time forward traffic: K, V read once; O, l, m initialized.
fn tiled_forward_fixed(n: u64, d: u64) -> (u64, u64) {
    (2 * n * d, n * d + 2 * n)
}

/// Per visited row of a block: Q_i, O_i, l_i, m_i in; O_i, l_i, m_i out.
fn tiled_forward_per_row(d: u64) -> (u64, u64) {
    (2 * d + 2, d + 2)
}

fn tiled_backward_fixed(n: u64, d: u64) -> (u64, u64) {
    // K, V read once; dQ initialized; dK, dV written once.
    (2 * n * d, n * d + 2 * n * d)
}

fn tiled_backward_per_row(d: u64) -> (u64, u64) {
    (4 * d + 2, d)
}

/// `reads = 2nd + tc(2nd + 2n)`, `writes = (nd + 2n) + tc(nd + 2n)`.
pub fn predict_flash_forward_io(n: usize, d: usize, plan: &TilePlan) -> IoPrediction {
    let (n, d, tc) = (u(n), u(d), u(plan.tc));
    let (fr, fw) = tiled_forward_fixed(n, d);
    let (pr, pw) = tiled_forward_per_row(d);
    IoPrediction {
        reads: fr + tc * n * pr,
        writes: fw + tc * n * pw,
        formula_id: FormulaId::FlashForward,
    }
}

/// `reads = 2nd + tc(4nd + 2n)`, `writes = 3nd + tc nd`.
pub fn predict_flash_backward_io(n: usize, d: usize, plan: &TilePlan) -> IoPrediction {
    let (n, d, tc) = (u(n), u(d), u(plan.tc));
    let (fr, fw) = tiled_backward_fixed(n, d);
    let (pr, pw) = tiled_backward_per_row(d);
    IoPrediction {
        reads: fr + tc * n * pr,
        writes: fw + tc * n * pw,
        formula_id: FormulaId::FlashBackward,
    }
}

/// Query rows visited by a density-`s` mask: `round(s tr tc) * n / tr`, which
/// is exact whenever `br` divides `n` (and always at `s = 0` or `s = 1`).
fn visited_rows_for_density(n: u64, plan: &TilePlan, s: f64) -> u64 {
    let blocks = u(plan.tr) * u(plan.tc);
    let nnz = (s * blocks as f64).round() as u64;
    (nnz * n * u(plan.tc) + blocks / 2) / blocks
}

fn check_density(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidSparsity(s));
    }
    Ok(())
}

/// Block-sparse forward traffic for a mask of density `s`: the one-time
/// `Nd` terms are unscaled, the pass term is scaled by `s`.
pub fn predict_blocksparse_io(n: usize, d: usize, plan: &TilePlan, s: f64) -> Result<IoPrediction> {
    check_density(s)?;
    let (n64, d64) = (u(n), u(d));
    let rows = visited_rows_for_density(n64, plan, s);
    let (fr, fw) = tiled_forward_fixed(n64, d64);
    let (pr, pw) = tiled_forward_per_row(d64);
    Ok(IoPrediction {
        reads: fr + rows * pr,
        writes: fw + rows * pw,
        formula_id: FormulaId::BlockSparseForward,
    })
}

pub fn predict_blocksparse_backward_io(
    n: usize,
    d: usize,
    plan: &TilePlan,
    s: f64,
) -> Result<IoPrediction> {
    check_density(s)?;
    let (n64, d64) = (u(n), u(d));
    let rows = visited_rows_for_density(n64, plan, s);
    let (fr, fw) = tiled_backward_fixed(n64, d64);
    let (pr, pw) = tiled_backward_per_row(d64);
    Ok(IoPrediction {
        reads: fr + rows * pr,
        writes: fw + rows * pw,
        formula_id: FormulaId::BlockSparseBackward,
    })
}

/// Sum of query-block lengths over the mask's nonzero blocks.
pub(crate) fn visited_rows(plan: &TilePlan, mask: &BlockMask) -> u64 {
    (0..plan.tr)
        .map(|i| {
            let (r0, r1) = plan.row_block(i);
            u(r1 - r0) * (0..plan.tc).filter(|&j| mask.is_nonzero(i, j)).count() as u64
        })
        .sum()
}

/// Exact block-sparse forward traffic for a specific mask.
pub fn predict_blocksparse_forward_io_for_mask(
    n: usize,
    d: usize,
    plan: &TilePlan,
    mask: &BlockMask,
) -> IoPrediction {
    let rows = visited_rows(plan, mask);
    let (fr, fw) = tiled_forward_fixed(u(n), u(d));
    let (pr, pw) = tiled_forward_per_row(u(d));
    IoPrediction {
        reads: fr + rows * pr,
        writes: fw + rows * pw,
        formula_id: FormulaId::BlockSparseForward,
    }
}

/// Exact block-sparse backward traffic for a specific mask.
pub fn predict_blocksparse_backward_io_for_mask(
    n: usize,
    d: usize,
    plan: &TilePlan,
    mask: &BlockMask,
) -> IoPrediction {
    let rows = visited_rows(plan, mask);
    let (fr, fw) = tiled_backward_fixed(u(n), u(d));
    let (pr, pw) = tiled_backward_per_row(u(d));
    IoPrediction {
        reads: fr + rows * pr,
        writes: fw + rows * pw,
        formula_id: FormulaId::BlockSparseBackward,
    }
}

/// One-time (density-independent) part of the block-sparse forward traffic.
pub fn blocksparse_forward_fixed_io(n: usize, d: usize) -> u64 {
    let (r, w) = tiled_forward_fixed(u(n), u(d));
    r + w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::plan_tiles;

    #[test]
    fn standard_forward_closed_form() {
        let p = predict_standard_forward_io(1, 1);
        assert_eq!((p.reads, p.writes), (5, 3));
        let p = predict_standard_forward_io(1024, 64);
        assert_eq!(p.reads, 3 * 65_536 + 2 * 1_048_576);
        assert_eq!(p.writes, 2_162_688);
    }

    #[test]
    fn standard_forward_quadratic_terms_quadruple() {
        let quad = |n: usize| 4 * (n as u64) * (n as u64);
        let a = predict_standard_forward_io(256, 64);
        let b = predict_standard_forward_io(512, 64);
        let lin = |n: usize| 4 * n as u64 * 64;
        assert_eq!(b.total() - lin(512), 4 * (a.total() - lin(256)));
        assert_eq!(a.total() - lin(256), quad(256));
    }

    #[test]
    fn flash_forward_halving_m_doubles_pass_term() {
        let n = 1024;
        let d = 64;
        let big = plan_tiles(n, d, 65_536, None).unwrap();
        let small = plan_tiles(n, d, 32_768, None).unwrap();
        assert_eq!(small.tc, 2 * big.tc);
        let fixed = 2 * 1024 * 64 + 1024 * 64 + 2 * 1024;
        let pass = |p: &TilePlan| predict_flash_forward_io(n, d, p).total() - fixed;
        assert_eq!(pass(&small), 2 * pass(&big));
    }

    #[test]
    fn single_pass_regime_is_linear_in_nd() {
        let (n, d) = (512, 32);
        let plan = plan_tiles(n, d, 4 * n * d, None).unwrap();
        assert_eq!(plan.tc, 1);
        let p = predict_flash_forward_io(n, d, &plan);
        // Every input/output matrix touched a constant number of times.
        assert_eq!(p.total(), (6 * n * d + 6 * n) as u64);
    }

    #[test]
    fn flash_backward_beats_standard_at_gpt2_shape() {
        let plan = plan_tiles(1024, 64, 65_536, None).unwrap();
        let flash = predict_flash_backward_io(1024, 64, &plan).total();
        let standard = predict_standard_backward_io(1024, 64).total();
        assert!(standard as f64 / flash as f64 > 3.0);
    }

    #[test]
    fn flash_backward_loses_below_the_crossover() {
        // Standard ~ 7n^2, tiled ~ 16 n^2 d^2 / M: the tiled backward costs
        // more once M drops under roughly 16d^2/7.
        let (n, d) = (1024, 64);
        let standard = predict_standard_backward_io(n, d).total();
        let tight = plan_tiles(n, d, d * d, None).unwrap();
        assert!(predict_flash_backward_io(n, d, &tight).total() > standard);
        let roomy = plan_tiles(n, d, 4 * d * d, None).unwrap();
        assert!(predict_flash_backward_io(n, d, &roomy).total() < standard);
    }

    #[test]
    fn density_extremes() {
        let (n, d) = (1000, 16);
        let plan = plan_tiles(n, d, 2048, None).unwrap();
        let dense = predict_blocksparse_io(n, d, &plan, 1.0).unwrap();
        let flash = predict_flash_forward_io(n, d, &plan);
        assert_eq!((dense.reads, dense.writes), (flash.reads, flash.writes));
        let empty = predict_blocksparse_io(n, d, &plan, 0.0).unwrap();
        assert_eq!(empty.total(), blocksparse_forward_fixed_io(n, d));
        assert!(predict_blocksparse_io(n, d, &plan, 1.5).is_err());
    }

    #[test]
    fn density_scales_pass_term_exactly() {
        let (n, d) = (4096, 64);
        let plan = plan_tiles(n, d, 65_536, None).unwrap();
        let fixed = blocksparse_forward_fixed_io(n, d);
        let pass = |s| predict_blocksparse_io(n, d, &plan, s).unwrap().total() - fixed;
        assert_eq!(4 * pass(0.25), pass(1.0));
    }
}
