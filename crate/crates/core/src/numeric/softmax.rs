//! Numerically stable softmax and the decomposable (max, denominator) statistics
//! that let a row be normalized one block at a time.

use crate::error::{Error, Result};

/// `exp(x - m)` with the masked convention `exp(-inf - anything) = 0`.
///
/// When `m` is `-inf` every `x` is `-inf` too (m is a running max), so the
/// `-inf - -inf` case never reaches `exp`.
#[inline]
pub fn shifted_exp(x: f64, m: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else {
        (x - m).exp()
    }
}

/// Softmax statistics of a single row: the max `m` and the shifted
/// denominator `l = sum_i exp(x_i - m)`.
///
/// `m = -inf, l = 0` is the statistic of an empty or fully masked row and the
/// identity element of [`RowStats::merge`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStats {
    pub m: f64,
    pub l: f64,
}

impl RowStats {
    pub const EMPTY: RowStats = RowStats {
        m: f64::NEG_INFINITY,
        l: 0.0,
    };

    /// Statistics of `x`. `-inf` entries are masked; NaN is an error.
    pub fn of(x: &[f64]) -> Result<RowStats> {
        let mut m = f64::NEG_INFINITY;
        for &v in x {
            if v.is_nan() {
                return Err(Error::NaN {
                    context: "softmax row".into(),
                });
            }
            if v > m {
                m = v;
            }
        }
        if m == f64::NEG_INFINITY {
            return Ok(RowStats::EMPTY);
        }
        let l = x.iter().map(|&v| shifted_exp(v, m)).sum();
        Ok(RowStats { m, l })
    }

    pub fn is_empty(&self) -> bool {
        self.m == f64::NEG_INFINITY
    }

    /// Rescale factors `(e^{m_a - m}, e^{m_b - m})` and the merged stats.
    pub fn merge_factors(self, other: RowStats) -> (f64, f64, RowStats) {
        let m = self.m.max(other.m);
        if m == f64::NEG_INFINITY {
            return (0.0, 0.0, RowStats::EMPTY);
        }
        let alpha = shifted_exp(self.m, m);
        let beta = shifted_exp(other.m, m);
        let merged = RowStats {
            m,
            l: alpha * self.l + beta * other.l,
        };
        (alpha, beta, merged)
    }

    /// Statistics of the concatenation of the two underlying rows.
    pub fn merge(self, other: RowStats) -> RowStats {
        self.merge_factors(other).2
    }
}

/// Per-row softmax statistics for a whole matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxStats {
    pub m: Vec<f64>,
    pub l: Vec<f64>,
}

impl SoftmaxStats {
    /// `n` empty rows (`m = -inf`, `l = 0`), the initial state of a forward pass.
    pub fn empty(n: usize) -> Self {
        Self {
            m: vec![f64::NEG_INFINITY; n],
            l: vec![0.0; n],
        }
    }

    pub fn from_rows(rows: impl IntoIterator<Item = RowStats>) -> Self {
        let (m, l) = rows.into_iter().map(|r| (r.m, r.l)).unzip();
        Self { m, l }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn row(&self, i: usize) -> RowStats {
        RowStats {
            m: self.m[i],
            l: self.l[i],
        }
    }

    /// Checks `len(m) == len(l)`, `l >= 0`, and `l == 0 <=> m == -inf`.
    pub fn validate(&self) -> Result<()> {
        if self.m.len() != self.l.len() {
            return Err(Error::InvalidConfig(format!(
                "softmax stats length mismatch: m has {}, l has {}",
                self.m.len(),
                self.l.len()
            )));
        }
        for (i, (&m, &l)) in self.m.iter().zip(&self.l).enumerate() {
            let ok = !m.is_nan() && l >= 0.0 && ((l == 0.0) == (m == f64::NEG_INFINITY));
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "softmax stats row {i} violates invariants (m={m}, l={l})"
                )));
            }
        }
        Ok(())
    }

    /// Largest difference over both vectors; matching `-inf` compare equal.
    pub fn max_abs_diff(&self, other: &SoftmaxStats) -> f64 {
        use crate::numeric::matrix::max_abs_diff_slices;
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        max_abs_diff_slices(&self.m, &other.m).max(max_abs_diff_slices(&self.l, &other.l))
    }
}

impl SoftmaxStats {
    /// Largest difference with `l` measured relative to `max(1, |l|)`, since
    /// denominators grow with the number of keys. `m` is compared absolutely.
    pub fn max_rel_diff(&self, other: &SoftmaxStats) -> f64 {
        use crate::numeric::matrix::max_abs_diff_slices;
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        let l = self
            .l
            .iter()
            .zip(&other.l)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
            .fold(0.0, f64::max);
        max_abs_diff_slices(&self.m, &other.m).max(l)
    }
}

/// Stable softmax of one row. A fully masked row yields all-zero probabilities
/// with [`RowStats::EMPTY`].
pub fn stable_softmax_row(x: &[f64]) -> Result<(Vec<f64>, RowStats)> {
    if x.is_empty() {
        return Err(Error::InvalidConfig("softmax of an empty row".into()));
    }
    let stats = RowStats::of(x)?;
    if stats.is_empty() {
        return Ok((vec![0.0; x.len()], stats));
    }
    let probs = x.iter().map(|&v| shifted_exp(v, stats.m) / stats.l).collect();
    Ok((probs, stats))
}

/// Merges a running row `(a, acc_a)` with a block `(b, acc_b)`.
///
/// Accumulators hold unnormalized sums `sum exp(x - m) * w`, each relative to
/// its own max. On return `acc_a` holds the accumulator relative to the merged
/// max; divide by the returned `l` to normalize.
pub fn merge_weighted(a: RowStats, acc_a: &mut [f64], b: RowStats, acc_b: &[f64]) -> RowStats {
    debug_assert_eq!(acc_a.len(), acc_b.len());
    let (alpha, beta, merged) = a.merge_factors(b);
    for (x, &y) in acc_a.iter_mut().zip(acc_b) {
        *x = alpha * *x + beta * y;
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NEG_INF: f64 = f64::NEG_INFINITY;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn symmetric_pair() {
        let (p, s) = stable_softmax_row(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(s, RowStats { m: 0.0, l: 2.0 });
    }

    #[test]
    fn masked_entry_forces_one_hot() {
        let (p, s) = stable_softmax_row(&[NEG_INF, 5.0]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        assert_eq!(s, RowStats { m: 5.0, l: 1.0 });
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let (p, s) = stable_softmax_row(&[NEG_INF, NEG_INF]).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
        assert_eq!(s, RowStats::EMPTY);
    }

    #[test]
    fn matches_extended_precision_reference() {
        // 40-digit exp-normalize of [1,2,3,4], computed without shifting.
        let expected = [
            0.032_058_603_280_084_988_450_811_47,
            0.087_144_318_742_032_567_489_459_39,
            0.236_882_818_089_910_132_298_029_3,
            0.643_914_259_887_972_311_761_699_9,
        ];
        let (p, s) = stable_softmax_row(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (got, want) in p.iter().zip(expected) {
            assert!(rel(*got, want) < 1e-15, "{got} vs {want}");
        }
        assert_eq!(s.m, 4.0);
        assert!(rel(s.l, 1.553_001_792_775_918_956_468_866) < 1e-15);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(
            stable_softmax_row(&[1.0, f64::NAN]),
            Err(Error::NaN { .. })
        ));
    }

    #[test]
    fn empty_stats_are_merge_identity() {
        let b = RowStats { m: 3.0, l: 2.0 };
        assert_eq!(RowStats::EMPTY.merge(b), b);
        assert_eq!(b.merge(RowStats::EMPTY), b);
        assert_eq!(RowStats::EMPTY.merge(RowStats::EMPTY), RowStats::EMPTY);
    }

    #[test]
    fn merge_of_halves_matches_concatenation() {
        let a = RowStats::of(&[1.0, 2.0]).unwrap();
        let b = RowStats::of(&[3.0, 4.0]).unwrap();
        let whole = RowStats::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let merged = a.merge(b);
        assert_eq!(merged.m, whole.m);
        assert!(rel(merged.l, whole.l) < 1e-15);
    }

    #[test]
    fn weighted_merge_reconstructs_weighted_sum() {
        let x = [0.5, -1.0, 2.0, 0.25, 1.5];
        let w = [1.0, 2.0, -1.0, 0.5, 3.0];
        let block = |lo: usize, hi: usize| {
            let s = RowStats::of(&x[lo..hi]).unwrap();
            let acc: f64 = (lo..hi).map(|i| shifted_exp(x[i], s.m) * w[i]).sum();
            (s, [acc])
        };
        let (sa, mut acc_a) = block(0, 2);
        let (sb, acc_b) = block(2, 5);
        let merged = merge_weighted(sa, &mut acc_a, sb, &acc_b);
        let (p, _) = stable_softmax_row(&x).unwrap();
        let expected: f64 = p.iter().zip(w).map(|(p, w)| p * w).sum();
        assert!((acc_a[0] / merged.l - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(x in prop::collection::vec(-50.0f64..50.0, 1..200)) {
            let (p, _) = stable_softmax_row(&x).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn merge_reconstructs_concatenated_stats(
            x in prop::collection::vec(-50.0f64..50.0, 2..1024),
            cut in 0.0f64..1.0,
        ) {
            let split = ((x.len() as f64 * cut) as usize).clamp(1, x.len() - 1);
            let a = RowStats::of(&x[..split]).unwrap();
            let b = RowStats::of(&x[split..]).unwrap();
            let whole = RowStats::of(&x).unwrap();
            let ab = a.merge(b);
            let ba = b.merge(a);
            prop_assert_eq!(ab.m, whole.m);
            prop_assert!(rel(ab.l, whole.l) <= 1e-14);
            prop_assert_eq!(ab.m, ba.m);
            prop_assert!(rel(ab.l, ba.l) <= 1e-15);
        }

        #[test]
        fn shift_moves_max_and_keeps_probs(
            k in prop::collection::vec(-51_200i32..51_200, 1..64),
            c in -100i32..100,
        ) {
            // Dyadic entries and an integer shift keep `x + c` exact.
            let x: Vec<f64> = k.iter().map(|&k| k as f64 / 1024.0).collect();
            let c = c as f64;
            let (p, s) = stable_softmax_row(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let (ps, ss) = stable_softmax_row(&shifted).unwrap();
            prop_assert_eq!(ss.m, s.m + c);
            for (a, b) in p.iter().zip(&ps) {
                prop_assert!((a - b).abs() <= 1e-14 * a.abs());
            }
        }
    }
}
