//! Dropout decisions are a pure function of (seed, i, j), so the backward
//! regenerates exactly the forward's mask without storing it.

use tiled_attn::bench::Problem;
use tiled_attn::{flash_backward, flash_forward, plan_tiles, AttnConfig, Matrix, MemoryModel};

fn main() -> tiled_attn::Result<()> {
    let n = 16;
    let plan = plan_tiles(n, n, 4 * 4 * n, None)?;
    let p = Problem::random(n, n, 5);
    let eye = Matrix::identity(n);
    let cfg = AttnConfig::new(n, n).with_dropout(0.5, 2024);

    // With V = I the output is the dropped probability matrix; with dO = I,
    // dV is its transpose.
    let mut mem = MemoryModel::new(plan.m_capacity)?;
    let saved = flash_forward(&p.q, &p.k, &eye, &cfg, &plan, &mut mem, None)?;
    let mut mem = MemoryModel::new(plan.m_capacity)?;
    let grads = flash_backward(&saved, &p.q, &p.k, &eye, &eye, &mut mem)?;

    let mut agree = true;
    for i in 0..n {
        let row: String = (0..n)
            .map(|j| {
                let fwd = saved.o[(i, j)] != 0.0;
                agree &= fwd == (grads.dv[(j, i)] != 0.0);
                if fwd { '#' } else { '.' }
            })
            .collect();
        println!("{row}");
    }
    println!("forward and backward keep patterns agree: {agree}");
    Ok(())
}
