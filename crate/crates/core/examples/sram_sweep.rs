//! Measured traffic as the key block grows, and standard traffic as N grows.
//! Writes CSV rows to stdout.

use tiled_attn::bench::{write_records, RunRecord};
use tiled_attn::io_model::{flop_model, predict_standard_forward_io, Algo, MemoryModel};
use tiled_attn::bench::Problem;
use tiled_attn::{flash_forward, plan_tiles, AttnConfig, TileOverrides};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d, m) = (1024, 64, 1 << 20);
    let p = Problem::random(n, d, 11);
    let cfg = AttnConfig::new(n, d);
    let mut records = Vec::new();
    for bc in [16, 32, 64, 128, 256, 512] {
        let plan = plan_tiles(n, d, m, Some(TileOverrides { br: Some(64), bc: Some(bc) }))?;
        let mut mem = MemoryModel::new(m)?;
        let t = std::time::Instant::now();
        flash_forward(&p.q, &p.k, &p.v, &cfg, &plan, &mut mem, None)?;
        let c = mem.counter();
        records.push(RunRecord {
            algo: Algo::FlashForward.name().into(),
            n,
            d,
            m,
            bc: Some(plan.bc),
            br: Some(plan.br),
            sparsity: 1.0,
            hbm_read_elems: c.hbm_read_elems,
            hbm_write_elems: c.hbm_write_elems,
            hbm_bytes: c.hbm_total() * 2,
            flops: flop_model(Algo::FlashForward, n, d, &plan, None)?,
            peak_sram_elems: c.peak_resident_elems,
            wall_ms_median: t.elapsed().as_secs_f64() * 1e3,
            max_abs_err_vs_oracle: None,
        });
    }
    write_records(&records, std::io::stdout())?;
    for n in [256, 512, 1024, 2048, 4096] {
        eprintln!("standard forward n={n:>5}: {} elements", predict_standard_forward_io(n, d).total());
    }
    Ok(())
}
