//! After each outer step the running (O, l, m) equal attention over the keys
//! seen so far.

use tiled_attn::bench::Problem;
use tiled_attn::reference::standard_forward_prefix;
use tiled_attn::{flash_forward, plan_tiles, AttnConfig, MaskSpec, MemoryModel, OuterSnapshot, SoftmaxStats};

fn main() -> tiled_attn::Result<()> {
    let (n, d, m) = (200, 8, 512);
    let plan = plan_tiles(n, d, m, None)?;
    let cfg = AttnConfig::new(n, d).with_mask(MaskSpec::Causal);
    let p = Problem::random(n, d, 8);
    let mut mem = MemoryModel::new(m)?;
    let mut obs = |snap: &OuterSnapshot| {
        let keys = plan.col_block(snap.block).1;
        let art = standard_forward_prefix(&p.q, &p.k, &p.v, &cfg, keys).expect("prefix oracle");
        let stats = SoftmaxStats { m: snap.m.clone(), l: snap.l.clone() };
        println!(
            "step {:>2}: keys 0..{keys:<3} |O| err {:.1e}  (l, m) err {:.1e}  l[last] = {:.4}",
            snap.step,
            snap.o.max_abs_diff(&art.o).unwrap_or(f64::INFINITY),
            stats.max_abs_diff(&art.stats),
            snap.l[n - 1]
        );
    };
    flash_forward(&p.q, &p.k, &p.v, &cfg, &plan, &mut mem, Some(&mut obs))?;
    Ok(())
}
