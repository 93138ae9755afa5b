//! Streaming attention with O(n) auxiliary memory: one query row at a time
//! for the forward pass, one (query, key) sweep for the backward pass.

use crate::error::{Error, Result};
use crate::numeric::{dot, shifted_exp, AttnConfig, Matrix, RowStats, SoftmaxStats};
use crate::reference::standard::{check_inputs, Gradients};

/// Auxiliary storage bound `AUX_PER_ROW * n + AUX_PER_DIM * d + AUX_CONST`.
pub const AUX_PER_ROW: u64 = 2;
pub const AUX_PER_DIM: u64 = 2;
pub const AUX_CONST: u64 = 4;

pub fn aux_bound(n: usize, d: usize) -> u64 {
    AUX_PER_ROW * n as u64 + AUX_PER_DIM * d as u64 + AUX_CONST
}

#[derive(Debug, Default, Clone, Copy)]
struct AuxTracker {
    current: u64,
    peak: u64,
}

impl AuxTracker {
    fn alloc(&mut self, elems: usize) {
        self.current += elems as u64;
        self.peak = self.peak.max(self.current);
    }

    fn free(&mut self, elems: usize) {
        self.current -= elems as u64;
    }
}

/// Output of [`memeff_forward_tracked`].
#[derive(Debug, Clone)]
pub struct MemeffForward {
    pub o: Matrix,
    /// Per-row max and shifted normalizer; `L_i = l_i * exp(m_i)`.
    pub stats: SoftmaxStats,
    pub peak_aux_elems: u64,
}

fn reject_dropout(cfg: &AttnConfig) -> Result<()> {
    if cfg.p_drop != 0.0 {
        return Err(Error::InvalidConfig(
            "the streaming reference does not support dropout".into(),
        ));
    }
    Ok(())
}

/// Streaming forward: `o_i = sum_j exp(s_ij - m_i) v_j / l_i` accumulated
/// with a running max, so only `(m_i, l_i)` and one `d`-vector are live per row.
pub fn memeff_forward(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttnConfig) -> Result<(Matrix, SoftmaxStats)> {
    let r = memeff_forward_tracked(q, k, v, cfg)?;
    Ok((r.o, r.stats))
}

pub fn memeff_forward_tracked(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttnConfig) -> Result<MemeffForward> {
    check_inputs(q, k, v, cfg)?;
    reject_dropout(cfg)?;
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        m.check_nan(name)?;
    }
    let (n, d) = (cfg.n, cfg.d);
    let mut aux = AuxTracker::default();
    let mut o = Matrix::zeros(n, d);
    // The saved statistics are the O(n) extra memory.
    aux.alloc(2 * n);
    let mut stats = SoftmaxStats::empty(n);
    aux.alloc(d + 2);
    let mut acc = vec![0.0; d];
    for i in 0..n {
        acc.fill(0.0);
        let mut st = RowStats::EMPTY;
        for j in 0..n {
            if cfg.mask.is_masked(i, j) {
                continue;
            }
            let s = cfg.tau * dot(q.row(i), k.row(j));
            if s > st.m {
                let alpha = shifted_exp(st.m, s);
                acc.iter_mut().for_each(|x| *x *= alpha);
                st.l *= alpha;
                st.m = s;
            }
            let w = (s - st.m).exp();
            st.l += w;
            for (x, &vj) in acc.iter_mut().zip(v.row(j)) {
                *x += w * vj;
            }
        }
        if st.l > 0.0 {
            for (x, &a) in o.row_mut(i).iter_mut().zip(&acc) {
                *x = a / st.l;
            }
        }
        stats.m[i] = st.m;
        stats.l[i] = st.l;
    }
    aux.free(d + 2);
    o.check_nan("streaming forward output")?;
    Ok(MemeffForward { o, stats, peak_aux_elems: aux.peak })
}

/// Output of [`memeff_backward_tracked`].
#[derive(Debug, Clone)]
pub struct MemeffBackward {
    pub grads: Gradients,
    pub peak_aux_elems: u64,
}

/// Streaming backward: `dv_j = sum_i P_ij do_i`, `D_i = do_i . o_i`,
/// `dq_i = tau sum_j dS_ij k_j`, `dk_j = tau sum_i dS_ij q_i` with
/// `dS_ij = P_ij (do_i . v_j - D_i)`. P is rebuilt from the saved statistics.
pub fn memeff_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    o: &Matrix,
    d_o: &Matrix,
    stats: &SoftmaxStats,
    cfg: &AttnConfig,
) -> Result<Gradients> {
    Ok(memeff_backward_tracked(q, k, v, o, d_o, stats, cfg)?.grads)
}

pub fn memeff_backward_tracked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    o: &Matrix,
    d_o: &Matrix,
    stats: &SoftmaxStats,
    cfg: &AttnConfig,
) -> Result<MemeffBackward> {
    check_inputs(q, k, v, cfg)?;
    reject_dropout(cfg)?;
    let (n, d) = (cfg.n, cfg.d);
    for (name, m) in [("O", o), ("dO", d_o)] {
        if m.shape() != (n, d) {
            return Err(Error::ShapeMismatch {
                op: name,
                left_rows: m.rows(),
                left_cols: m.cols(),
                right_rows: n,
                right_cols: d,
            });
        }
    }
    if stats.len() != n {
        return Err(Error::PlanMismatch(format!(
            "softmax stats cover {} rows, expected {n}",
            stats.len()
        )));
    }
    stats.validate()?;

    let mut aux = AuxTracker::default();
    let mut grads = Gradients::zeros(n, d);
    aux.alloc(n);
    let big_d: Vec<f64> = (0..n).map(|i| dot(d_o.row(i), o.row(i))).collect();
    aux.alloc(d);
    let mut dq_row = vec![0.0; d];
    for i in 0..n {
        let st = stats.row(i);
        if st.is_empty() {
            continue;
        }
        dq_row.fill(0.0);
        for j in 0..n {
            if cfg.mask.is_masked(i, j) {
                continue;
            }
            let p = (cfg.tau * dot(q.row(i), k.row(j)) - st.m).exp() / st.l;
            for (x, &g) in grads.dv.row_mut(j).iter_mut().zip(d_o.row(i)) {
                *x += p * g;
            }
            let ds = p * (dot(d_o.row(i), v.row(j)) - big_d[i]);
            for (x, &kj) in dq_row.iter_mut().zip(k.row(j)) {
                *x += ds * kj;
            }
            for (x, &qi) in grads.dk.row_mut(j).iter_mut().zip(q.row(i)) {
                *x += cfg.tau * ds * qi;
            }
        }
        for (x, &a) in grads.dq.row_mut(i).iter_mut().zip(&dq_row) {
            *x = cfg.tau * a;
        }
    }
    aux.free(d);
    aux.free(n);
    Ok(MemeffBackward { grads, peak_aux_elems: aux.peak })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::MaskSpec;
    use crate::reference::{standard_backward, standard_forward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn forward_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (q, k, v) = (randn(16, 8, &mut rng), randn(16, 8, &mut rng), randn(16, 8, &mut rng));
        for mask in [MaskSpec::None, MaskSpec::Causal, MaskSpec::KeyPadding { valid_len: 5 }] {
            let cfg = AttnConfig::new(16, 8).with_mask(mask);
            let (o, stats) = memeff_forward(&q, &k, &v, &cfg).unwrap();
            let art = standard_forward(&q, &k, &v, &cfg, None).unwrap();
            assert!(o.max_abs_diff(&art.o).unwrap() <= 1e-10);
            assert!(stats.max_abs_diff(&art.stats) <= 1e-12);
        }
    }

    #[test]
    fn single_visible_key_is_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (randn(4, 3, &mut rng), randn(4, 3, &mut rng), randn(4, 3, &mut rng));
        let cfg = AttnConfig::new(4, 3).with_mask(MaskSpec::KeyPadding { valid_len: 1 });
        let (o, _) = memeff_forward(&q, &k, &v, &cfg).unwrap();
        for i in 0..4 {
            assert_eq!(o.row(i), v.row(0));
        }
    }

    #[test]
    fn backward_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, k, v) = (randn(12, 4, &mut rng), randn(12, 4, &mut rng), randn(12, 4, &mut rng));
        let d_o = randn(12, 4, &mut rng);
        for mask in [MaskSpec::None, MaskSpec::Causal] {
            let cfg = AttnConfig::new(12, 4).with_mask(mask);
            let (o, stats) = memeff_forward(&q, &k, &v, &cfg).unwrap();
            let g = memeff_backward(&q, &k, &v, &o, &d_o, &stats, &cfg).unwrap();
            let art = standard_forward(&q, &k, &v, &cfg, None).unwrap();
            let r = standard_backward(&art, &q, &k, &v, &d_o, &cfg, None).unwrap();
            assert!(g.max_abs_diff(&r).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn zero_cotangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (randn(5, 2, &mut rng), randn(5, 2, &mut rng), randn(5, 2, &mut rng));
        let cfg = AttnConfig::new(5, 2);
        let (o, stats) = memeff_forward(&q, &k, &v, &cfg).unwrap();
        let g = memeff_backward(&q, &k, &v, &o, &Matrix::zeros(5, 2), &stats, &cfg).unwrap();
        assert_eq!(g, Gradients::zeros(5, 2));
    }

    #[test]
    fn row_reduction_equals_output_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (q, k, v) = (randn(9, 5, &mut rng), randn(9, 5, &mut rng), randn(9, 5, &mut rng));
            let d_o = randn(9, 5, &mut rng);
            let cfg = AttnConfig::new(9, 5);
            let art = standard_forward(&q, &k, &v, &cfg, None).unwrap();
            for i in 0..9 {
                let long: f64 = (0..9).map(|j| art.p[(i, j)] * dot(d_o.row(i), v.row(j))).sum();
                let short = dot(d_o.row(i), art.o.row(i));
                assert!((long - short).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn auxiliary_memory_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, d) in [(1, 1), (40, 3), (200, 16)] {
            let (q, k, v) = (randn(n, d, &mut rng), randn(n, d, &mut rng), randn(n, d, &mut rng));
            let cfg = AttnConfig::new(n, d);
            let f = memeff_forward_tracked(&q, &k, &v, &cfg).unwrap();
            assert!(f.peak_aux_elems <= aux_bound(n, d));
            let b = memeff_backward_tracked(&q, &k, &v, &f.o, &q, &f.stats, &cfg).unwrap();
            assert!(b.peak_aux_elems <= aux_bound(n, d));
        }
    }

    #[test]
    fn dropout_is_rejected() {
        let z = Matrix::zeros(2, 2);
        let cfg = AttnConfig::new(2, 2).with_dropout(0.1, 0);
        assert!(memeff_forward(&z, &z, &z, &cfg).is_err());
    }
}
