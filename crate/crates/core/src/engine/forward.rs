use crate::engine::{BlockMask, TilePlan};
use crate::error::{Error, Result};
use crate::io_model::MemoryModel;
use crate::numeric::{dot, AttnConfig, DropoutRng, Matrix, SoftmaxStats};
use crate::reference::check_inputs;

/// What the forward pass leaves in HBM for the backward pass.
#[derive(Debug, Clone)]
pub struct FlashSaved {
    pub o: Matrix,
    pub stats: SoftmaxStats,
    pub rng: DropoutRng,
    pub plan: TilePlan,
    pub cfg: AttnConfig,
}

/// State of the output after one outer (key/value block) iteration.
#[derive(Debug, Clone)]
pub struct OuterSnapshot {
    /// Position in the visiting order, starting at 0.
    pub step: usize,
    /// Key/value block just processed.
    pub block: usize,
    pub o: Matrix,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
}

pub type Observer<'a> = &'a mut dyn FnMut(&OuterSnapshot);

/// `exp(a - b)` where `a = -inf` contributes nothing.
#[inline]
pub(crate) fn exp_diff(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        0.0
    } else {
        (a - b).exp()
    }
}

pub(crate) fn check_plan(plan: &TilePlan, cfg: &AttnConfig) -> Result<()> {
    if plan.n != cfg.n || plan.d != cfg.d {
        return Err(Error::PlanMismatch(format!(
            "plan is for n={}, d={} but the problem has n={}, d={}",
            plan.n, plan.d, cfg.n, cfg.d
        )));
    }
    Ok(())
}

pub(crate) fn check_block_mask(plan: &TilePlan, bmask: &BlockMask) -> Result<()> {
    let got = (bmask.tr(), bmask.tc(), bmask.br(), bmask.bc());
    let want = (plan.tr, plan.tc, plan.br, plan.bc);
    if got != want {
        return Err(Error::BlockMaskMismatch(format!(
            "mask grid (tr, tc, br, bc) = {got:?} but plan has {want:?}"
        )));
    }
    Ok(())
}

fn natural_order(tc: usize) -> Vec<usize> {
    (0..tc).collect()
}

/// Tiled exact attention with online softmax.
///
/// For each key/value block `j` (outer loop) and query block `i` (inner
/// loop) the score tile `S_ij = tau Q_i K_j^T` is masked, its row max and
/// exponentials are taken, dropout is applied, and `O_i`, `l_i`, `m_i` are
/// rescaled and updated in place. `observer` sees a copy of `(O, l, m)` after
/// every outer iteration.
pub fn flash_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    plan: &TilePlan,
    mem: &mut MemoryModel,
    observer: Option<Observer<'_>>,
) -> Result<FlashSaved> {
    forward_impl(q, k, v, cfg, plan, mem, None, &natural_order(plan.tc), observer)
}

/// [`flash_forward`] visiting the key/value blocks in `order`, which must be
/// a permutation of `0..tc`.
#[allow(clippy::too_many_arguments)]
pub fn flash_forward_scheduled(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    plan: &TilePlan,
    mem: &mut MemoryModel,
    order: &[usize],
    observer: Option<Observer<'_>>,
) -> Result<FlashSaved> {
    let mut seen = vec![false; plan.tc];
    for &j in order {
        if j >= plan.tc || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidConfig(format!(
                "outer order {order:?} is not a permutation of 0..{}",
                plan.tc
            )));
        }
    }
    if order.len() != plan.tc {
        return Err(Error::InvalidConfig(format!(
            "outer order has {} blocks, plan has {}",
            order.len(),
            plan.tc
        )));
    }
    forward_impl(q, k, v, cfg, plan, mem, None, order, observer)
}

/// [`flash_forward`] that skips the zero blocks of `bmask`.
pub fn blocksparse_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    plan: &TilePlan,
    bmask: &BlockMask,
    mem: &mut MemoryModel,
) -> Result<FlashSaved> {
    check_block_mask(plan, bmask)?;
    forward_impl(q, k, v, cfg, plan, mem, Some(bmask), &natural_order(plan.tc), None)
}

#[allow(clippy::too_many_arguments)]
fn forward_impl(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttnConfig,
    plan: &TilePlan,
    mem: &mut MemoryModel,
    bmask: Option<&BlockMask>,
    order: &[usize],
    mut observer: Option<Observer<'_>>,
) -> Result<FlashSaved> {
    check_inputs(q, k, v, cfg)?;
    check_plan(plan, cfg)?;
    let dropout = cfg.dropout()?;
    let (n, d) = (cfg.n, cfg.d);
    mem.set_ceiling(plan.forward_ceiling())?;

    // O, l, m initialized in HBM.
    let mut o = Matrix::zeros(n, d);
    let mut stats = SoftmaxStats::empty(n);
    mem.hbm_alloc(n * d + 2 * n);
    mem.store(n * d + 2 * n);

    for (step, &j) in order.iter().enumerate() {
        let (c0, c1) = plan.col_block(j);
        let c = c1 - c0;
        mem.load(2 * c * d)?;
        let kj = k.rows_slice(c0, c1);
        let vj = v.rows_slice(c0, c1);

        for i in 0..plan.tr {
            if bmask.is_some_and(|b| !b.is_nonzero(i, j)) {
                continue;
            }
            let (r0, r1) = plan.row_block(i);
            let r = r1 - r0;
            // Q_i, O_i, l_i, m_i in; score tile and four scratch stat vectors.
            mem.load(2 * r * d + 2 * r)?;
            mem.acquire(r * c + 4 * r)?;

            let check_masks = cfg.mask.may_mask_block(r0, r1, c0, c1);
            let mut tile = vec![0.0; r * c];
            let mut pv = vec![0.0; d];
            for (ii, row) in (r0..r1).zip(tile.chunks_exact_mut(c)) {
                let qi = q.row(ii);
                for (jj, x) in (c0..c1).zip(row.iter_mut()) {
                    *x = cfg.tau * dot(qi, &kj[(jj - c0) * d..(jj - c0 + 1) * d]);
                    if check_masks && cfg.mask.is_masked(ii, jj) {
                        *x = f64::NEG_INFINITY;
                    }
                }
                if row.iter().any(|x| x.is_nan()) {
                    mem.abort_run();
                    return Err(Error::NonFiniteBlock { row_block: i, col_block: j });
                }

                let m_tilde = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut l_tilde = 0.0;
                for x in row.iter_mut() {
                    *x = exp_diff(*x, m_tilde);
                    l_tilde += *x;
                }
                for (jj, x) in (c0..c1).zip(row.iter_mut()) {
                    *x *= dropout.factor(ii, jj);
                }

                let (m_old, l_old) = (stats.m[ii], stats.l[ii]);
                let m_new = m_old.max(m_tilde);
                let a = exp_diff(m_old, m_new) * l_old;
                let b = exp_diff(m_tilde, m_new);
                let l_new = a + b * l_tilde;

                pv.fill(0.0);
                for (jj, &p) in row.iter().enumerate() {
                    if p != 0.0 {
                        for (acc, &y) in pv.iter_mut().zip(&vj[jj * d..(jj + 1) * d]) {
                            *acc += p * y;
                        }
                    }
                }
                let orow = o.row_mut(ii);
                if l_new > 0.0 {
                    for (x, &y) in orow.iter_mut().zip(&pv) {
                        *x = (a * *x + b * y) / l_new;
                    }
                }
                if orow.iter().any(|x| !x.is_finite()) {
                    mem.abort_run();
                    return Err(Error::NonFiniteBlock { row_block: i, col_block: j });
                }
                stats.m[ii] = m_new;
                stats.l[ii] = l_new;
            }

            let (r64, c64, d64) = (r as u64, c as u64, d as u64);
            // QK^T and scale; rowmax, sub, exp, rowsum; dropout; PV.
            mem.flops(2 * r64 * c64 * d64 + r64 * c64);
            mem.flops(4 * r64 * c64);
            mem.flops(r64 * c64);
            mem.flops(2 * r64 * c64 * d64);
            // New max, two rescale factors, new denominator; O rescale/add/normalize.
            mem.flops(8 * r64);
            mem.flops(4 * r64 * d64);

            mem.store(r * d + 2 * r);
            mem.release(r * c + 6 * r + 2 * r * d);
        }
        mem.release(2 * c * d);

        if let Some(obs) = observer.as_deref_mut() {
            obs(&OuterSnapshot {
                step,
                block: j,
                o: o.clone(),
                l: stats.l.clone(),
                m: stats.m.clone(),
            });
        }
    }
    mem.set_ceiling(u64::MAX)?;
    Ok(FlashSaved { o, stats, rng: cfg.rng(), plan: *plan, cfg: cfg.clone() })
}
