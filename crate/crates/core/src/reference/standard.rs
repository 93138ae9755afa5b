use crate::error::{Error, Result};
use crate::io_model::AccessCounter;
use crate::numeric::{matmul, matmul_nt, matmul_tn, stable_softmax_row, AttnConfig, Matrix, SoftmaxStats};

/// Everything the materialized forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    pub o: Matrix,
    /// Scaled and masked scores.
    pub s: Matrix,
    /// Softmax probabilities before dropout.
    pub p: Matrix,
    pub p_dropped: Matrix,
    pub stats: SoftmaxStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
}

impl Gradients {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            dq: Matrix::zeros(n, d),
            dk: Matrix::zeros(n, d),
            dv: Matrix::zeros(n, d),
        }
    }

    /// Largest entrywise difference across the three gradients.
    pub fn max_abs_diff(&self, other: &Gradients) -> Result<f64> {
        Ok(self
            .dq
            .max_abs_diff(&other.dq)?
            .max(self.dk.max_abs_diff(&other.dk)?)
            .max(self.dv.max_abs_diff(&other.dv)?))
    }

    pub fn all_finite(&self) -> bool {
        self.dq.all_finite() && self.dk.all_finite() && self.dv.all_finite()
    }
}

pub(crate) fn check_inputs(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttnConfig) -> Result<()> {
    cfg.validate()?;
    if q.shape() != (cfg.n, cfg.d) {
        return Err(Error::ShapeMismatch {
            op: "attention input Q",
            left_rows: q.rows(),
            left_cols: q.cols(),
            right_rows: cfg.n,
            right_cols: cfg.d,
        });
    }
    for (name, m) in [("attention input K", k), ("attention input V", v)] {
        if m.shape() != q.shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                left_rows: m.rows(),
                left_cols: m.cols(),
                right_rows: q.rows(),
                right_cols: q.cols(),
            });
        }
    }
    Ok(())
}

/// Materialized attention: `S = tau Q K^T`, mask, row softmax, dropout,
/// `O = P_dropped V`.
///
/// HBM charges when `counter` is given: read Q, K and write S; read S and
/// write P; read P, V and write O (dropout is applied while P is streamed).
pub fn standard_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    counter: Option<&mut AccessCounter>,
) -> Result<ForwardArtifacts> {
    check_inputs(q, k, v, cfg)?;
    forward_over_keys(q, k, v, cfg, counter)
}

/// Reference attention of all queries over the first `keys` keys, with masks
/// and dropout evaluated at global positions.
pub fn standard_forward_prefix(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    keys: usize,
) -> Result<ForwardArtifacts> {
    check_inputs(q, k, v, cfg)?;
    let keys = keys.min(cfg.n);
    forward_over_keys(q, &k.row_range(0, keys), &v.row_range(0, keys), cfg, None)
}

fn forward_over_keys(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    mut counter: Option<&mut AccessCounter>,
) -> Result<ForwardArtifacts> {
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        m.check_nan(name)?;
    }
    let (n, nk, d) = (q.rows(), k.rows(), q.cols());
    let (n64, nk64, d64) = (n as u64, nk as u64, d as u64);
    let dropout = cfg.dropout()?;

    let mut s = matmul_nt(q, k, counter.as_deref_mut())?;
    for i in 0..n {
        for (j, x) in s.row_mut(i).iter_mut().enumerate() {
            *x *= cfg.tau;
            if cfg.mask.is_masked(i, j) {
                *x = f64::NEG_INFINITY;
            }
        }
    }
    s.check_nan("scores")?;

    let mut p = Matrix::zeros(n, nk);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (probs, st) = stable_softmax_row(s.row(i))?;
        p.row_mut(i).copy_from_slice(&probs);
        rows.push(st);
    }
    let stats = SoftmaxStats::from_rows(rows);

    let p_dropped = Matrix::from_fn(n, nk, |i, j| p[(i, j)] * dropout.factor(i, j));
    let o = matmul(&p_dropped, v, counter.as_deref_mut())?;

    if let Some(c) = counter {
        // scale, then max/sub/exp/sum/div for the softmax, then dropout.
        c.add_flops(7 * n64 * nk64);
        c.add_reads(2 * n64 * d64);
        c.add_writes(n64 * nk64);
        c.add_reads(n64 * nk64);
        c.add_writes(n64 * nk64);
        c.add_reads(n64 * nk64 + nk64 * d64);
        c.add_writes(n64 * d64);
    }
    Ok(ForwardArtifacts { o, s, p, p_dropped, stats })
}

/// Materialized backward pass.
///
/// `dV = P_dropped^T dO`, `dP = (dO V^T) * Z`, `dS = P * (dP - D)` with
/// `D_i = sum_l P_il dP_il`, `dQ = tau dS K`, `dK = tau dS^T Q`.
pub fn standard_backward(
    art: &ForwardArtifacts,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_o: &Matrix,
    cfg: &AttnConfig,
    counter: Option<&mut AccessCounter>,
) -> Result<Gradients> {
    check_inputs(q, k, v, cfg)?;
    let (n, d) = (cfg.n, cfg.d);
    if d_o.shape() != (n, d) {
        return Err(Error::ShapeMismatch {
            op: "attention cotangent dO",
            left_rows: d_o.rows(),
            left_cols: d_o.cols(),
            right_rows: n,
            right_cols: d,
        });
    }
    if art.p.shape() != (n, n) || art.p_dropped.shape() != (n, n) {
        return Err(Error::PlanMismatch(format!(
            "forward artifacts are {}x{}, expected {n}x{n}",
            art.p.rows(),
            art.p.cols()
        )));
    }
    d_o.check_nan("dO")?;
    let dropout = cfg.dropout()?;
    let mut counter = counter;

    let dv = matmul_tn(&art.p_dropped, d_o, counter.as_deref_mut())?;
    let mut dp = matmul_nt(d_o, v, counter.as_deref_mut())?;
    for i in 0..n {
        for (j, x) in dp.row_mut(i).iter_mut().enumerate() {
            *x *= dropout.factor(i, j);
        }
    }
    let mut ds = Matrix::zeros(n, n);
    for i in 0..n {
        let (pr, dpr) = (art.p.row(i), dp.row(i));
        let di: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
        for (x, (&pij, &dpij)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dpr)) {
            *x = pij * (dpij - di);
        }
    }
    let dq = matmul(&ds, k, counter.as_deref_mut())?.map(|x| cfg.tau * x);
    let dk = matmul_tn(&ds, q, counter.as_deref_mut())?.map(|x| cfg.tau * x);

    if let Some(c) = counter {
        let (n, d) = (n as u64, d as u64);
        // dropout routing, D (mul + add), dS (sub + mul), then the two tau scalings.
        c.add_flops(5 * n * n + 2 * n * d);
        // dV: read P, dO; write dV.
        c.add_reads(n * n + n * d);
        c.add_writes(n * d);
        // dP: read dO, V; write dP.
        c.add_reads(2 * n * d);
        c.add_writes(n * n);
        // dS: read P, dP; write dS.
        c.add_reads(2 * n * n);
        c.add_writes(n * n);
        // dQ: read dS, K; write dQ. dK: read dS, Q; write dK.
        c.add_reads(2 * (n * n + n * d));
        c.add_writes(2 * n * d);
    }
    Ok(Gradients { dq, dk, dv })
}
