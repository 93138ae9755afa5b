use crate::engine::forward::{check_block_mask, check_plan, exp_diff};
use crate::engine::{BlockMask, FlashSaved};
use crate::error::{Error, Result};
use crate::io_model::MemoryModel;
use crate::numeric::{dot, Matrix};
use crate::reference::{check_inputs, Gradients};

/// Tiled backward pass with recomputation.
///
/// For each key/value block `j` the accumulators `dK_j`, `dV_j` stay on chip
/// while every query block `i` is visited: `P_ij = exp(S_ij - m_i) / l_i` is
/// rebuilt from the saved statistics, the dropout mask is regenerated from its
/// positions, and `dQ_i += tau dS_ij K_j` is read-modify-written in HBM.
pub fn flash_backward(
    saved: &FlashSaved,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_o: &Matrix,
    mem: &mut MemoryModel,
) -> Result<Gradients> {
    backward_impl(saved, q, k, v, d_o, None, mem)
}

/// [`flash_backward`] that skips the zero blocks of `bmask`.
pub fn blocksparse_backward(
    saved: &FlashSaved,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_o: &Matrix,
    bmask: &BlockMask,
    mem: &mut MemoryModel,
) -> Result<Gradients> {
    check_block_mask(&saved.plan, bmask)?;
    backward_impl(saved, q, k, v, d_o, Some(bmask), mem)
}

fn check_saved(saved: &FlashSaved, d_o: &Matrix) -> Result<()> {
    let (n, d) = (saved.cfg.n, saved.cfg.d);
    if saved.o.shape() != (n, d) || saved.stats.len() != n {
        return Err(Error::PlanMismatch(format!(
            "saved output is {}x{} with {} statistics rows, expected {n}x{d}",
            saved.o.rows(),
            saved.o.cols(),
            saved.stats.len()
        )));
    }
    if saved.rng != saved.cfg.rng() {
        return Err(Error::PlanMismatch("saved dropout state differs from the config seed".into()));
    }
    if d_o.shape() != (n, d) {
        return Err(Error::ShapeMismatch {
            op: "attention cotangent dO",
            left_rows: d_o.rows(),
            left_cols: d_o.cols(),
            right_rows: n,
            right_cols: d,
        });
    }
    saved.stats.validate()
}

fn backward_impl(
    saved: &FlashSaved,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_o: &Matrix,
    bmask: Option<&BlockMask>,
    mem: &mut MemoryModel,
) -> Result<Gradients> {
    let (cfg, plan) = (&saved.cfg, &saved.plan);
    check_inputs(q, k, v, cfg)?;
    check_plan(plan, cfg)?;
    check_saved(saved, d_o)?;
    d_o.check_nan("dO")?;
    let dropout = cfg.dropout()?;
    let (n, d, tau) = (cfg.n, cfg.d, cfg.tau);
    let (o, stats) = (&saved.o, &saved.stats);
    mem.set_ceiling(plan.backward_ceiling())?;

    let mut grads = Gradients::zeros(n, d);
    mem.hbm_alloc(3 * n * d);
    // dQ initialized in HBM; dK, dV are written once per key block.
    mem.store(n * d);

    for j in 0..plan.tc {
        let (c0, c1) = plan.col_block(j);
        let c = c1 - c0;
        mem.load(2 * c * d)?;
        mem.acquire(2 * c * d)?;
        let kj = k.rows_slice(c0, c1);
        let vj = v.rows_slice(c0, c1);
        let mut dk_j = vec![0.0; c * d];
        let mut dv_j = vec![0.0; c * d];

        for i in 0..plan.tr {
            if bmask.is_some_and(|b| !b.is_nonzero(i, j)) {
                continue;
            }
            let (r0, r1) = plan.row_block(i);
            let r = r1 - r0;
            // Q_i, O_i, dO_i, dQ_i, l_i, m_i in; D_i and the P, dP/dS tiles on chip.
            mem.load(4 * r * d + 2 * r)?;
            mem.acquire(r + 2 * r * c)?;

            let check_masks = cfg.mask.may_mask_block(r0, r1, c0, c1);
            let mut p = vec![0.0; c];
            let mut dp = vec![0.0; c];
            for ii in r0..r1 {
                let st = stats.row(ii);
                let (qi, doi) = (q.row(ii), d_o.row(ii));
                for (jj, x) in (c0..c1).zip(p.iter_mut()) {
                    let s = if check_masks && cfg.mask.is_masked(ii, jj) {
                        f64::NEG_INFINITY
                    } else {
                        tau * dot(qi, &kj[(jj - c0) * d..(jj - c0 + 1) * d])
                    };
                    if s.is_nan() {
                        mem.abort_run();
                        return Err(Error::NonFiniteBlock { row_block: i, col_block: j });
                    }
                    // l_i = 0 only for fully masked rows, whose scores are all -inf.
                    *x = if st.l > 0.0 { exp_diff(s, st.m) / st.l } else { 0.0 };
                }
                let big_d = dot(doi, o.row(ii));
                let mut dq_acc = vec![0.0; d];
                for (jl, (&pij, dpij)) in p.iter().zip(dp.iter_mut()).enumerate() {
                    let z = dropout.factor(ii, c0 + jl);
                    let pd = pij * z;
                    if pd != 0.0 {
                        for (acc, &g) in dv_j[jl * d..(jl + 1) * d].iter_mut().zip(doi) {
                            *acc += pd * g;
                        }
                    }
                    *dpij = dot(doi, &vj[jl * d..(jl + 1) * d]) * z;
                    let ds = pij * (*dpij - big_d);
                    if ds != 0.0 {
                        for (acc, &kv) in dq_acc.iter_mut().zip(&kj[jl * d..(jl + 1) * d]) {
                            *acc += ds * kv;
                        }
                        for (acc, &qv) in dk_j[jl * d..(jl + 1) * d].iter_mut().zip(qi) {
                            *acc += tau * ds * qv;
                        }
                    }
                }
                for (x, &a) in grads.dq.row_mut(ii).iter_mut().zip(&dq_acc) {
                    *x += tau * a;
                }
            }

            let (r64, c64, d64) = (r as u64, c as u64, d as u64);
            // Five r x c x d products.
            mem.flops(10 * r64 * c64 * d64);
            // Scale; sub, exp, div; dropout on P and on dP; sub, mul for dS.
            mem.flops(8 * r64 * c64);
            // D_i; dQ scale and accumulate.
            mem.flops(4 * r64 * d64);
            // dV accumulate; dK scale and accumulate.
            mem.flops(3 * c64 * d64);

            mem.store(r * d);
            mem.release(4 * r * d + 2 * r + r + 2 * r * c);
        }

        for (jl, jj) in (c0..c1).enumerate() {
            grads.dk.row_mut(jj).copy_from_slice(&dk_j[jl * d..(jl + 1) * d]);
            grads.dv.row_mut(jj).copy_from_slice(&dv_j[jl * d..(jl + 1) * d]);
        }
        mem.store(2 * c * d);
        mem.release(4 * c * d);
    }
    mem.set_ceiling(u64::MAX)?;
    if !grads.all_finite() {
        return Err(Error::NaN { context: "tiled backward gradients".into() });
    }
    Ok(grads)
}
