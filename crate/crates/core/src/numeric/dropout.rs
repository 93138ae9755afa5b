//! Counter-based dropout randomness.
//!
//! The keep/drop decision for score `(i, j)` is a pure function of
//! `(seed, i, j)`:
//!
//! ```text
//! r = mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)
//! h = mix64(r    + (j + 1) * 0xC2B2AE3D27D4EB4F)
//! u = (h >> 11) * 2^-53                       // uniform in [0, 1)
//! keep  <=>  u >= p
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer (variant 13 constants) and all
//! arithmetic wraps mod 2^64. The stream is therefore identical across
//! platforms and independent of the order in which tiles visit `(i, j)`.

use crate::error::{Error, Result};

const ROW_KEY: u64 = 0x9E37_79B9_7F4A_7C15;
const COL_KEY: u64 = 0xC2B2_AE3D_27D4_EB4F;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The saved PRNG state of a forward pass: nothing but the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutRng {
    pub seed: u64,
}

impl DropoutRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    #[inline]
    pub fn bits(&self, i: usize, j: usize) -> u64 {
        let row = mix64(
            self.seed
                .wrapping_add((i as u64).wrapping_add(1).wrapping_mul(ROW_KEY)),
        );
        mix64(row.wrapping_add((j as u64).wrapping_add(1).wrapping_mul(COL_KEY)))
    }

    /// Uniform draw in `[0, 1)` for position `(i, j)`.
    #[inline]
    pub fn uniform(&self, i: usize, j: usize) -> f64 {
        (self.bits(i, j) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// A validated dropout layer: rng plus probability, with the keep scale
/// precomputed so the hot loop does not re-check `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rng: DropoutRng,
    p: f64,
    scale: f64,
}

impl Dropout {
    pub fn new(rng: DropoutRng, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidDropout(p));
        }
        Ok(Self {
            rng,
            p,
            scale: 1.0 / (1.0 - p),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn rng(&self) -> DropoutRng {
        self.rng
    }

    /// `0` or `1/(1-p)`; exactly `1.0` when `p == 0`.
    #[inline]
    pub fn factor(&self, i: usize, j: usize) -> f64 {
        if self.p == 0.0 || self.rng.uniform(i, j) >= self.p {
            self.scale
        } else {
            0.0
        }
    }
}

/// Dropout multiplier for score `(i, j)`: `1/(1-p)` with probability `1-p`, else `0`.
pub fn dropout_scale(rng: DropoutRng, i: usize, j: usize, p: f64) -> Result<f64> {
    Ok(Dropout::new(rng, p)?.factor(i, j))
}
