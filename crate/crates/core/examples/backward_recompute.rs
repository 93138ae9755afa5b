//! Backward pass that recomputes the attention matrix from (Q, K, V, l, m)
//! instead of storing it, compared with the reference gradients.

use tiled_attn::bench::Problem;
use tiled_attn::io_model::{predict_standard_backward_io, MemoryModel};
use tiled_attn::{flash_backward, flash_forward, plan_tiles, standard_backward, standard_forward, AttnConfig, MaskSpec};

fn main() -> tiled_attn::Result<()> {
    let (n, d, m) = (256, 16, 4096);
    let cfg = AttnConfig::new(n, d).with_mask(MaskSpec::Causal).with_dropout(0.1, 7);
    let plan = plan_tiles(n, d, m, None)?;
    let p = Problem::random(n, d, 1);

    let mut mem = MemoryModel::new(m)?;
    let saved = flash_forward(&p.q, &p.k, &p.v, &cfg, &plan, &mut mem, None)?;
    println!("saved for backward: O ({n}x{d}) plus l, m ({n} each); no {n}x{n} matrix");

    let mut mem = MemoryModel::new(m)?;
    let grads = flash_backward(&saved, &p.q, &p.k, &p.v, &p.d_o, &mut mem)?;
    let art = standard_forward(&p.q, &p.k, &p.v, &cfg, None)?;
    let reference = standard_backward(&art, &p.q, &p.k, &p.v, &p.d_o, &cfg, None)?;

    println!("max gradient error vs reference: {:.2e}", grads.max_abs_diff(&reference)?);
    println!(
        "HBM elements: tiled backward {} vs standard backward {}",
        mem.counter().hbm_total(),
        predict_standard_backward_io(n, d).total()
    );
    Ok(())
}
