//! Block-sparse attention: zero blocks are skipped, so traffic and FLOPs
//! scale with the fraction of nonzero blocks.

use tiled_attn::bench::{masked_config, Problem};
use tiled_attn::io_model::{blocksparse_forward_fixed_io, flop_model, Algo, MemoryModel};
use tiled_attn::{blocksparse_forward, make_block_mask, plan_tiles, standard_forward, AttnConfig, BlockMaskKind};

fn main() -> tiled_attn::Result<()> {
    let (n, d, m) = (1024, 64, 16384);
    let plan = plan_tiles(n, d, m, None)?;
    let cfg = AttnConfig::new(n, d);
    let p = Problem::random(n, d, 3);
    let kinds = [
        ("dense", BlockMaskKind::Random { density: 1.0, seed: 0 }),
        ("random 1/4", BlockMaskKind::Random { density: 0.25, seed: 9 }),
        ("butterfly", BlockMaskKind::Butterfly),
        ("local+global", BlockMaskKind::LocalPlusGlobal { window: 1, globals: 1 }),
    ];
    println!("{:<14} {:>8} {:>12} {:>14} {:>10}", "pattern", "density", "pass HBM", "FLOPs", "max err");
    for (name, kind) in kinds {
        let bmask = make_block_mask(kind, plan.tr, plan.tc, plan.br, plan.bc)?;
        let mut mem = MemoryModel::new(m)?;
        let out = blocksparse_forward(&p.q, &p.k, &p.v, &cfg, &plan, &bmask, &mut mem)?;
        let reference = standard_forward(&p.q, &p.k, &p.v, &masked_config(&cfg, &bmask), None)?;
        let flops = flop_model(Algo::BlockSparseForward, n, d, &plan, Some(&bmask))?;
        println!(
            "{name:<14} {:>8.3} {:>12} {flops:>14} {:>10.1e}",
            bmask.density(),
            mem.counter().hbm_total() - blocksparse_forward_fixed_io(n, d),
            out.o.max_abs_diff(&reference.o)?
        );
    }
    Ok(())
}
