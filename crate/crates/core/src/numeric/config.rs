use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::dropout::{Dropout, DropoutRng};

/// Boolean keep-pattern over the score matrix (`true` keeps the score,
/// `false` forces it to `-inf`).
#[derive(Clone, PartialEq, Eq)]
pub struct ElementMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl ElementMask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "element mask has {} entries, expected {rows}x{cols}",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let keep = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self { rows, cols, keep }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }
}

impl fmt::Debug for ElementMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kept = self.keep.iter().filter(|&&k| k).count();
        write!(f, "ElementMask({}x{}, {kept} kept)", self.rows, self.cols)
    }
}

/// Which scores are forced to `-inf` before the softmax.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    None,
    /// Keys at positions `>= valid_len` are masked for every query.
    KeyPadding { valid_len: usize },
    /// Query `i` sees keys `j <= i`.
    Causal,
    Custom(Arc<ElementMask>),
}

impl MaskSpec {
    /// True when score `(i, j)` must be set to `-inf`.
    #[inline]
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        match self {
            MaskSpec::None => false,
            MaskSpec::KeyPadding { valid_len } => j >= *valid_len,
            MaskSpec::Causal => j > i,
            MaskSpec::Custom(m) => !m.keeps(i, j),
        }
    }

    /// Whether any score in rows `r0..r1`, columns `c0..c1` might be masked.
    /// Lets tiles skip the per-element check.
    pub fn may_mask_block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> bool {
        match self {
            MaskSpec::None => false,
            MaskSpec::KeyPadding { valid_len } => c1 > *valid_len,
            MaskSpec::Causal => c1 > r0 + 1,
            MaskSpec::Custom(_) => r1 > r0 && c1 > c0,
        }
    }

    /// Element mask that keeps `(i, j)` iff both `self` and `extra` keep it.
    pub fn intersect(&self, extra: &ElementMask) -> MaskSpec {
        let combined =
            ElementMask::from_fn(extra.rows, extra.cols, |i, j| extra.keeps(i, j) && !self.is_masked(i, j));
        MaskSpec::Custom(Arc::new(combined))
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSpec::None => write!(f, "none"),
            MaskSpec::KeyPadding { valid_len } => write!(f, "padding:{valid_len}"),
            MaskSpec::Causal => write!(f, "causal"),
            MaskSpec::Custom(m) => write!(f, "custom:{}x{}", m.rows, m.cols),
        }
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// Parses `none`, `causal`, or `padding:<len>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(MaskSpec::None),
            "causal" => Ok(MaskSpec::Causal),
            other => {
                if let Some(len) = other.strip_prefix("padding:") {
                    let valid_len = len.trim().parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad padding length `{len}`"))
                    })?;
                    Ok(MaskSpec::KeyPadding { valid_len })
                } else {
                    Err(Error::InvalidConfig(format!(
                        "unknown mask `{other}` (expected none, causal, or padding:<len>)"
                    )))
                }
            }
        }
    }
}

/// One attention problem: sizes, softmax scale, mask, and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnConfig {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub mask: MaskSpec,
    pub p_drop: f64,
    pub seed: u64,
}

impl AttnConfig {
    /// No mask, no dropout, `tau = 1/sqrt(d)`.
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            tau: 1.0 / (d.max(1) as f64).sqrt(),
            mask: MaskSpec::None,
            p_drop: 0.0,
            seed: 0,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_mask(mut self, mask: MaskSpec) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_dropout(mut self, p_drop: f64, seed: u64) -> Self {
        self.p_drop = p_drop;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidConfig(format!(
                "n and d must be at least 1 (got n={}, d={})",
                self.n, self.d
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive and finite (got {})",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::InvalidDropout(self.p_drop));
        }
        if let MaskSpec::Custom(m) = &self.mask {
            if m.rows != self.n || m.cols != self.n {
                return Err(Error::InvalidConfig(format!(
                    "custom mask is {}x{}, expected {n}x{n}",
                    m.rows,
                    m.cols,
                    n = self.n
                )));
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> DropoutRng {
        DropoutRng::new(self.seed)
    }

    pub fn dropout(&self) -> Result<Dropout> {
        Dropout::new(self.rng(), self.p_drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tau_is_inverse_sqrt_d() {
        assert_eq!(AttnConfig::new(8, 16).tau, 0.25);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(AttnConfig::new(0, 4).validate().is_err());
        assert!(AttnConfig::new(4, 0).validate().is_err());
        assert!(AttnConfig::new(4, 4).with_tau(0.0).validate().is_err());
        assert!(matches!(
            AttnConfig::new(4, 4).with_dropout(1.0, 0).validate(),
            Err(Error::InvalidDropout(_))
        ));
        let wrong = ElementMask::from_fn(3, 4, |_, _| true);
        assert!(AttnConfig::new(4, 4)
            .with_mask(MaskSpec::Custom(Arc::new(wrong)))
            .validate()
            .is_err());
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("none".parse::<MaskSpec>().unwrap(), MaskSpec::None);
        assert_eq!("causal".parse::<MaskSpec>().unwrap(), MaskSpec::Causal);
        assert_eq!(
            "padding:12".parse::<MaskSpec>().unwrap(),
            MaskSpec::KeyPadding { valid_len: 12 }
        );
        assert!("padding:x".parse::<MaskSpec>().is_err());
        assert!("diagonal".parse::<MaskSpec>().is_err());
    }

    #[test]
    fn block_hint_is_conservative() {
        let masks = [
            MaskSpec::None,
            MaskSpec::Causal,
            MaskSpec::KeyPadding { valid_len: 5 },
        ];
        for mask in &masks {
            for r0 in 0..8 {
                for c0 in 0..8 {
                    let (r1, c1) = (r0 + 3, c0 + 2);
                    let any = (r0..r1).any(|i| (c0..c1).any(|j| mask.is_masked(i, j)));
                    if any {
                        assert!(mask.may_mask_block(r0, r1, c0, c1), "{mask} {r0} {c0}");
                    }
                }
            }
        }
    }

    #[test]
    fn intersection_keeps_only_common_entries() {
        let diag = ElementMask::from_fn(4, 4, |i, j| i / 2 == j / 2);
        let combined = MaskSpec::Causal.intersect(&diag);
        assert!(!combined.is_masked(1, 0));
        assert!(combined.is_masked(0, 1));
        assert!(combined.is_masked(2, 1));
    }
}
