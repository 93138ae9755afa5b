//! Tiled forward against the materialized reference for a few masks.

use tiled_attn::bench::Problem;
use tiled_attn::{flash_forward, plan_tiles, standard_forward, AttnConfig, MaskSpec, MemoryModel};

fn main() -> tiled_attn::Result<()> {
    let (n, d, m) = (300, 32, 8192);
    let plan = plan_tiles(n, d, m, None)?;
    println!("n={n} d={d} M={m}: br={} bc={} ({}x{} blocks)", plan.br, plan.bc, plan.tr, plan.tc);
    let p = Problem::random(n, d, 42);
    for mask in [MaskSpec::None, MaskSpec::Causal, MaskSpec::KeyPadding { valid_len: 200 }] {
        let cfg = AttnConfig::new(n, d).with_mask(mask.clone());
        let mut mem = MemoryModel::new(m)?;
        let tiled = flash_forward(&p.q, &p.k, &p.v, &cfg, &plan, &mut mem, None)?;
        let reference = standard_forward(&p.q, &p.k, &p.v, &cfg, None)?;
        println!(
            "mask={mask:<12} max|O - O_ref| = {:.2e}  peak SRAM {} / ceiling {}",
            tiled.o.max_abs_diff(&reference.o)?,
            mem.counter().peak_resident_elems,
            plan.forward_ceiling()
        );
    }
    Ok(())
}
