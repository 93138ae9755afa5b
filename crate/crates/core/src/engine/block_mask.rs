use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::ElementMask;

/// Block sparsity pattern generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockMaskKind {
    /// Each block kept independently with probability `density`; the
    /// diagonal is always kept so no query row is left without keys.
    Random { density: f64, seed: u64 },
    /// Block `(i, j)` kept when `i == j` or `i xor j` is a power of two.
    Butterfly,
    /// Band of half-width `window` blocks around the diagonal plus `globals`
    /// leading block rows and columns.
    LocalPlusGlobal { window: usize, globals: usize },
}

/// Boolean `tr x tc` grid over the tiling of the score matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    tr: usize,
    tc: usize,
    br: usize,
    bc: usize,
    grid: Vec<bool>,
}

impl BlockMask {
    pub fn from_fn(
        tr: usize,
        tc: usize,
        br: usize,
        bc: usize,
        mut keep: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut grid = Vec::with_capacity(tr * tc);
        for i in 0..tr {
            for j in 0..tc {
                grid.push(keep(i, j));
            }
        }
        Self { tr, tc, br, bc, grid }
    }

    pub fn dense(tr: usize, tc: usize, br: usize, bc: usize) -> Self {
        Self::from_fn(tr, tc, br, bc, |_, _| true)
    }

    pub fn tr(&self) -> usize {
        self.tr
    }

    pub fn tc(&self) -> usize {
        self.tc
    }

    pub fn br(&self) -> usize {
        self.br
    }

    pub fn bc(&self) -> usize {
        self.bc
    }

    #[inline]
    pub fn is_nonzero(&self, i: usize, j: usize) -> bool {
        self.grid[i * self.tc + j]
    }

    pub fn nnz(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    /// Fraction of nonzero blocks.
    pub fn density(&self) -> f64 {
        if self.grid.is_empty() {
            return 0.0;
        }
        self.nnz() as f64 / self.grid.len() as f64
    }

    /// Element-level `n x n` keep mask.
    pub fn expand(&self, n: usize) -> ElementMask {
        ElementMask::from_fn(n, n, |r, c| self.is_nonzero(r / self.br, c / self.bc))
    }
}

pub fn make_block_mask(
    kind: BlockMaskKind,
    tr: usize,
    tc: usize,
    br: usize,
    bc: usize,
) -> Result<BlockMask> {
    if tr == 0 || tc == 0 || br == 0 || bc == 0 {
        return Err(Error::BlockMaskMismatch(format!(
            "empty grid tr={tr} tc={tc} br={br} bc={bc}"
        )));
    }
    let mask = match kind {
        BlockMaskKind::Random { density, seed } => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::InvalidSparsity(density));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            BlockMask::from_fn(tr, tc, br, bc, |i, j| {
                let draw = rng.random::<f64>() < density;
                // Keep the diagonal only when the mask is not meant to be empty.
                draw || (density > 0.0 && diagonal(i, j, br, bc))
            })
        }
        BlockMaskKind::Butterfly => {
            BlockMask::from_fn(tr, tc, br, bc, |i, j| i == j || (i ^ j).is_power_of_two())
        }
        BlockMaskKind::LocalPlusGlobal { window, globals } => {
            BlockMask::from_fn(tr, tc, br, bc, |i, j| i.abs_diff(j) <= window || i < globals || j < globals)
        }
    };
    Ok(mask)
}

/// Whether block `(i, j)` contains part of the element diagonal.
fn diagonal(i: usize, j: usize, br: usize, bc: usize) -> bool {
    let (r0, r1) = (i * br, (i + 1) * br);
    let (c0, c1) = (j * bc, (j + 1) * bc);
    r0 < c1 && c0 < r1
}
