//! Closed-form HBM traffic and FLOPs for a GPT-2 medium sized attention
//! layer (N=1024, d=64, 16 heads x batch 64, fp16), forward plus backward.

use tiled_attn::io_model::{
    flop_model, predict_flash_backward_io, predict_flash_forward_io, predict_standard_backward_io,
    predict_standard_forward_io, Algo,
};
use tiled_attn::plan_tiles;

fn main() -> tiled_attn::Result<()> {
    let (n, d) = (1024, 64);
    let heads = 16 * 64u64;
    let bytes = 2u64;
    let standard = predict_standard_forward_io(n, d).total() + predict_standard_backward_io(n, d).total();
    println!("standard: {:.2} GB", (standard * heads * bytes) as f64 / 1e9);
    for m in [25_600, 51_200, 65_536, 102_400, 204_800] {
        let plan = plan_tiles(n, d, m, None)?;
        let flash = predict_flash_forward_io(n, d, &plan).total() + predict_flash_backward_io(n, d, &plan).total();
        let f = |a| flop_model(a, n, d, &plan, None);
        let flop_ratio = (f(Algo::FlashForward)? + f(Algo::FlashBackward)?) as f64
            / (f(Algo::StandardForward)? + f(Algo::StandardBackward)?) as f64;
        println!(
            "M={m:>7} bc={:>4} tc={:>2}: tiled {:>6.2} GB, traffic ratio {:>5.2}x, FLOP ratio {flop_ratio:.3}",
            plan.bc,
            plan.tc,
            (flash * heads * bytes) as f64 / 1e9,
            standard as f64 / flash as f64
        );
    }
    Ok(())
}
