use std::fs::File;
use std::io::Write;
use std::time::Instant;

use crate::bench::args::Settings;
use crate::bench::record::{write_records, RunRecord};
use crate::bench::runner::{flops, oracle, prediction, run_algo, masked_config, Problem};
use crate::engine::{
    blocksparse_backward, blocksparse_forward, flash_backward, flash_forward, flash_forward_scheduled,
    make_block_mask, plan_tiles, BlockMask, OuterSnapshot, TilePlan,
};
use crate::error::Error;
use crate::io_model::{byte_report, AccessCounter, Algo, MemoryModel};
use crate::numeric::{AttnConfig, SoftmaxStats};
use crate::reference::{standard_backward, standard_forward, standard_forward_prefix};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// `Ok(true)` pass, `Ok(false)` assertion failure, `Err` usage or setup error.
pub type Outcome = Result<bool, String>;

const FORWARD_TOL: f64 = 1e-10;
const STATS_TOL: f64 = 1e-12;
const SCHEDULE_TOL: f64 = 1e-12;
const GRADCHECK_TOL: f64 = 1e-6;
const MAX_PREFIX_STEPS: usize = 64;

fn usage(e: Error) -> String {
    e.to_string()
}

fn io(e: std::io::Error) -> String {
    e.to_string()
}

struct Points<'a> {
    s: &'a Settings,
}

/// Every `(n, d, m, plan)` combination of the settings, in flag order.
impl Points<'_> {
    fn collect(&self) -> Result<Vec<(AttnConfig, TilePlan)>, String> {
        let mut out = Vec::new();
        for &n in &self.s.n {
            for &d in &self.s.d {
                let cfg = self.s.config(n, d);
                cfg.validate().map_err(usage)?;
                for ov in self.s.overrides() {
                    for m in self.s.capacities(n, d, ov) {
                        out.push((cfg.clone(), plan_tiles(n, d, m, Some(ov)).map_err(usage)?));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn block_mask(s: &Settings, plan: &TilePlan, density: f64) -> Result<BlockMask, String> {
    make_block_mask(s.pattern.kind(density, s.seed), plan.tr, plan.tc, plan.br, plan.bc).map_err(usage)
}

struct Checker<'w> {
    out: &'w mut dyn Write,
    ok: bool,
}

impl Checker<'_> {
    fn error(&mut self, name: &str, err: f64, tol: f64) -> std::io::Result<()> {
        let pass = err <= tol;
        self.ok &= pass;
        writeln!(
            self.out,
            "  {name:<22} max_abs_err {err:.3e} (tol {tol:.0e})  {}",
            if pass { "ok" } else { "FAIL" }
        )
    }

    fn exact(&mut self, name: &str, got: u64, want: u64) -> std::io::Result<()> {
        let pass = got == want;
        self.ok &= pass;
        writeln!(
            self.out,
            "  {name:<22} counted {got} predicted {want}  {}",
            if pass { "ok" } else { "FAIL" }
        )
    }

    fn flag(&mut self, name: &str, pass: bool, detail: &str) -> std::io::Result<()> {
        self.ok &= pass;
        writeln!(self.out, "  {name:<22} {detail}  {}", if pass { "ok" } else { "FAIL" })
    }
}

fn check_counter(c: &mut Checker<'_>, label: &str, counter: &AccessCounter, algo: Algo, plan: &TilePlan, bmask: Option<&BlockMask>) -> Result<(), String> {
    let p = prediction(algo, plan.n, plan.d, plan, bmask);
    c.exact(&format!("{label} reads"), counter.hbm_read_elems, p.reads).map_err(io)?;
    c.exact(&format!("{label} writes"), counter.hbm_write_elems, p.writes).map_err(io)?;
    let f = flops(algo, plan.n, plan.d, plan, bmask).map_err(usage)?;
    c.exact(&format!("{label} flops"), counter.flops, f).map_err(io)
}

pub fn verify(s: &Settings, out: &mut dyn Write) -> Outcome {
    let points = Points { s }.collect()?;
    let mut all_ok = true;
    for (cfg, plan) in points {
        let (n, d) = (cfg.n, cfg.d);
        writeln!(
            out,
            "n={n} d={d} M={} br={} bc={} mask={} p_drop={} seed={}",
            plan.m_capacity, plan.br, plan.bc, cfg.mask, cfg.p_drop, cfg.seed
        )
        .map_err(io)?;
        let p = Problem::random(n, d, s.seed);
        let with_oracle = n <= s.oracle_cap;
        let mut c = Checker { out: &mut *out, ok: true };

        // Forward, with prefix snapshots checked as they arrive.
        let stride = plan.tc.div_ceil(MAX_PREFIX_STEPS);
        let mut prefix_err: f64 = 0.0;
        let mut prefix_checked = 0;
        let mut prefix_failure = None;
        let mut obs = |snap: &OuterSnapshot| {
            if !with_oracle || (!snap.step.is_multiple_of(stride) && snap.step + 1 != plan.tc) {
                return;
            }
            let keys = plan.col_block(snap.block).1;
            match standard_forward_prefix(&p.q, &p.k, &p.v, &cfg, keys) {
                Ok(art) => {
                    let st = SoftmaxStats { m: snap.m.clone(), l: snap.l.clone() };
                    let e = snap.o.max_abs_diff(&art.o).unwrap_or(f64::INFINITY);
                    prefix_err = prefix_err.max(e).max(st.max_abs_diff(&art.stats));
                    prefix_checked += 1;
                }
                Err(e) => prefix_failure = Some(e),
            }
        };
        let mut mem = MemoryModel::new(plan.m_capacity).map_err(usage)?;
        let saved = flash_forward(&p.q, &p.k, &p.v, &cfg, &plan, &mut mem, Some(&mut obs)).map_err(usage)?;
        if let Some(e) = prefix_failure {
            return Err(usage(e));
        }
        let fwd_counter = *mem.counter();
        let fwd_alloc = mem.hbm_allocated();
        mem.reset();
        let grads = flash_backward(&saved, &p.q, &p.k, &p.v, &p.d_o, &mut mem).map_err(usage)?;
        let bwd_counter = *mem.counter();

        if with_oracle {
            let art = standard_forward(&p.q, &p.k, &p.v, &cfg, None).map_err(usage)?;
            c.error("forward", saved.o.max_abs_diff(&art.o).map_err(usage)?, FORWARD_TOL).map_err(io)?;
            c.error("forward stats (rel)", saved.stats.max_rel_diff(&art.stats), STATS_TOL).map_err(io)?;
            let g = standard_backward(&art, &p.q, &p.k, &p.v, &p.d_o, &cfg, None).map_err(usage)?;
            c.error("backward", grads.max_abs_diff(&g).map_err(usage)?, FORWARD_TOL).map_err(io)?;
            c.error(&format!("prefix ({prefix_checked} steps)"), prefix_err, FORWARD_TOL).map_err(io)?;
        } else {
            writeln!(c.out, "  oracle comparisons skipped (n > oracle cap {})", s.oracle_cap).map_err(io)?;
        }

        let reversed: Vec<usize> = (0..plan.tc).rev().collect();
        let mut scratch = MemoryModel::new(plan.m_capacity).map_err(usage)?;
        let permuted =
            flash_forward_scheduled(&p.q, &p.k, &p.v, &cfg, &plan, &mut scratch, &reversed, None).map_err(usage)?;
        c.error("schedule invariance", saved.o.max_abs_diff(&permuted.o).map_err(usage)?, SCHEDULE_TOL)
            .map_err(io)?;

        check_counter(&mut c, "forward", &fwd_counter, Algo::FlashForward, &plan, None)?;
        check_counter(&mut c, "backward", &bwd_counter, Algo::FlashBackward, &plan, None)?;
        c.exact("forward extra HBM", fwd_alloc, (n * d + 2 * n) as u64).map_err(io)?;
        c.flag(
            "peak SRAM",
            fwd_counter.peak_resident_elems <= plan.forward_ceiling()
                && bwd_counter.peak_resident_elems <= plan.backward_ceiling(),
            &format!(
                "forward {} / {} backward {} / {}",
                fwd_counter.peak_resident_elems,
                plan.forward_ceiling(),
                bwd_counter.peak_resident_elems,
                plan.backward_ceiling()
            ),
        )
        .map_err(io)?;

        // Block-sparse against the masked oracle.
        let bmask = block_mask(s, &plan, s.sparsity[0])?;
        let mut mem = MemoryModel::new(plan.m_capacity).map_err(usage)?;
        let bs = blocksparse_forward(&p.q, &p.k, &p.v, &cfg, &plan, &bmask, &mut mem).map_err(usage)?;
        let bs_fwd = *mem.counter();
        mem.reset();
        let bs_grads = blocksparse_backward(&bs, &p.q, &p.k, &p.v, &p.d_o, &bmask, &mut mem).map_err(usage)?;
        let bs_bwd = *mem.counter();
        if with_oracle {
            let masked = masked_config(&cfg, &bmask);
            let art = standard_forward(&p.q, &p.k, &p.v, &masked, None).map_err(usage)?;
            let g = standard_backward(&art, &p.q, &p.k, &p.v, &p.d_o, &masked, None).map_err(usage)?;
            let label = format!("block-sparse s={:.3}", bmask.density());
            c.error(&label, bs.o.max_abs_diff(&art.o).map_err(usage)?, FORWARD_TOL).map_err(io)?;
            c.error("block-sparse backward", bs_grads.max_abs_diff(&g).map_err(usage)?, FORWARD_TOL)
                .map_err(io)?;
        }
        check_counter(&mut c, "block-sparse fwd", &bs_fwd, Algo::BlockSparseForward, &plan, Some(&bmask))?;
        check_counter(&mut c, "block-sparse bwd", &bs_bwd, Algo::BlockSparseBackward, &plan, Some(&bmask))?;

        let ok = c.ok;
        writeln!(out, "  => {}", if ok { "PASS" } else { "FAIL" }).map_err(io)?;
        all_ok &= ok;
    }
    Ok(all_ok)
}

pub fn gradcheck(s: &Settings, out: &mut dyn Write) -> Outcome {
    let points = Points { s }.collect()?;
    let mut all_ok = true;
    for (cfg, plan) in points {
        let (n, d) = (cfg.n, cfg.d);
        if n > s.fd_cap {
            return Err(format!("n={n} exceeds the finite-difference cap --fd-cap {}", s.fd_cap));
        }
        let mut p = Problem::random(n, d, s.seed);
        if s.zero_do {
            p.d_o = crate::numeric::Matrix::zeros(n, d);
        }
        let run_forward = |q: &crate::numeric::Matrix, k: &crate::numeric::Matrix, v: &crate::numeric::Matrix| {
            let mut mem = MemoryModel::new(plan.m_capacity)?;
            flash_forward(q, k, v, &cfg, &plan, &mut mem, None)
        };
        let saved = run_forward(&p.q, &p.k, &p.v).map_err(usage)?;
        let mut mem = MemoryModel::new(plan.m_capacity).map_err(usage)?;
        let grads = flash_backward(&saved, &p.q, &p.k, &p.v, &p.d_o, &mut mem).map_err(usage)?;
        writeln!(
            out,
            "n={n} d={d} M={} mask={} p_drop={} h={:e}",
            plan.m_capacity, cfg.mask, cfg.p_drop, s.h
        )
        .map_err(io)?;

        if s.zero_do {
            let zero = [&grads.dq, &grads.dk, &grads.dv]
                .iter()
                .all(|g| g.as_slice().iter().all(|&x| x == 0.0));
            writeln!(out, "  zero cotangent: all gradients zero = {zero}").map_err(io)?;
            all_ok &= zero;
            continue;
        }

        // Objective g(O) = sum(dO * O), whose gradient in O is dO.
        let objective = |o: &crate::numeric::Matrix| -> f64 {
            o.as_slice().iter().zip(p.d_o.as_slice()).map(|(a, b)| a * b).sum()
        };
        let mut worst: f64 = 0.0;
        for (which, name) in ["dQ", "dK", "dV"].iter().enumerate() {
            let analytic = [&grads.dq, &grads.dk, &grads.dv][which];
            let mut name_worst: f64 = 0.0;
            for r in 0..n {
                for col in 0..d {
                    let bumped = |delta: f64| -> Result<f64, String> {
                        let mut xs = [p.q.clone(), p.k.clone(), p.v.clone()];
                        xs[which].row_mut(r)[col] += delta;
                        Ok(objective(&run_forward(&xs[0], &xs[1], &xs[2]).map_err(usage)?.o))
                    };
                    let fd = (bumped(s.h)? - bumped(-s.h)?) / (2.0 * s.h);
                    let a = analytic[(r, col)];
                    let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    name_worst = name_worst.max(err);
                }
            }
            writeln!(out, "  {name} max rel err {name_worst:.3e}").map_err(io)?;
            worst = worst.max(name_worst);
        }
        let ok = worst <= GRADCHECK_TOL;
        writeln!(out, "  => {} (tol {GRADCHECK_TOL:e})", if ok { "PASS" } else { "FAIL" }).map_err(io)?;
        all_ok &= ok;
    }
    Ok(all_ok)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Runs every sweep point. Returns the records and whether every counted
/// value matched its closed form.
pub fn sweep_records(s: &Settings) -> Result<(Vec<RunRecord>, bool), String> {
    let points = Points { s }.collect()?;
    let algos = s.algos.clone().unwrap_or_else(|| vec![Algo::FlashForward]);
    let mut records = Vec::new();
    let mut exact = true;
    for algo in algos {
        for (cfg, plan) in &points {
            let (n, d) = (cfg.n, cfg.d);
            let p = Problem::random(n, d, s.seed);
            let densities: Vec<Option<f64>> = if algo.is_block_sparse() {
                s.sparsity.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for density in densities {
                let bmask = density.map(|x| block_mask(s, plan, x)).transpose()?;
                run_algo(algo, &p, cfg, plan, bmask.as_ref()).map_err(usage)?;
                let mut times = Vec::with_capacity(s.repeats);
                let mut first = None;
                for _ in 0..s.repeats {
                    let t = Instant::now();
                    let run = run_algo(algo, &p, cfg, plan, bmask.as_ref()).map_err(usage)?;
                    times.push(t.elapsed().as_secs_f64() * 1e3);
                    first.get_or_insert(run);
                }
                let run = first.expect("repeats >= 1");
                let pred = prediction(algo, n, d, plan, bmask.as_ref());
                let model = flops(algo, n, d, plan, bmask.as_ref()).map_err(usage)?;
                exact &= run.counter.hbm_read_elems == pred.reads
                    && run.counter.hbm_write_elems == pred.writes
                    && run.counter.flops == model;
                let err = if n <= s.oracle_cap {
                    let reference = oracle(algo, &p, cfg, bmask.as_ref()).map_err(usage)?;
                    Some(run.output.max_abs_diff(&reference).map_err(usage)?)
                } else {
                    None
                };
                let tiled = !matches!(algo, Algo::StandardForward | Algo::StandardBackward);
                let bytes = byte_report(&run.counter, s.element_bytes, 1);
                records.push(RunRecord {
                    algo: algo.name().to_string(),
                    n,
                    d,
                    m: plan.m_capacity,
                    bc: tiled.then_some(plan.bc),
                    br: tiled.then_some(plan.br),
                    sparsity: bmask.as_ref().map_or(1.0, BlockMask::density),
                    hbm_read_elems: run.counter.hbm_read_elems,
                    hbm_write_elems: run.counter.hbm_write_elems,
                    hbm_bytes: bytes.total_bytes,
                    flops: run.counter.flops,
                    peak_sram_elems: run.counter.peak_resident_elems,
                    wall_ms_median: (median(times) * 1e3).round() / 1e3,
                    max_abs_err_vs_oracle: err,
                });
            }
        }
    }
    Ok((records, exact))
}

pub fn sweep(s: &Settings, out: &mut dyn Write) -> Outcome {
    let (records, exact) = sweep_records(s)?;
    match &s.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            write_records(&records, file).map_err(usage)?;
            writeln!(out, "wrote {} rows to {}", records.len(), path.display()).map_err(io)?;
        }
        None => write_records(&records, &mut *out).map_err(usage)?,
    }
    if !exact {
        writeln!(out, "counted traffic differs from the closed form in at least one row").map_err(io)?;
    }
    Ok(exact)
}

pub fn predict(s: &Settings, out: &mut dyn Write) -> Outcome {
    let points = Points { s }.collect()?;
    let algos = s.algos.clone().unwrap_or_else(|| Algo::ALL.to_vec());
    let mut all_ok = true;
    for (cfg, plan) in points {
        let (n, d) = (cfg.n, cfg.d);
        writeln!(out, "n={n} d={d} M={} br={} bc={} tr={} tc={}", plan.m_capacity, plan.br, plan.bc, plan.tr, plan.tc)
            .map_err(io)?;
        writeln!(
            out,
            "  {:<16} {:>14} {:>14} {:>14} {:>14}  match",
            "algo", "pred reads", "pred writes", "count reads", "count writes"
        )
        .map_err(io)?;
        let p = Problem::random(n, d, s.seed);
        let bmask = block_mask(s, &plan, s.sparsity[0])?;
        let mut counted = Vec::new();
        for &algo in &algos {
            let bm = algo.is_block_sparse().then_some(&bmask);
            let run = run_algo(algo, &p, &cfg, &plan, bm).map_err(usage)?;
            let pred = prediction(algo, n, d, &plan, bm);
            let ok = run.counter.hbm_read_elems == pred.reads && run.counter.hbm_write_elems == pred.writes;
            all_ok &= ok;
            writeln!(
                out,
                "  {:<16} {:>14} {:>14} {:>14} {:>14}  {}",
                algo.name(),
                pred.reads,
                pred.writes,
                run.counter.hbm_read_elems,
                run.counter.hbm_write_elems,
                if ok { "yes" } else { "NO" }
            )
            .map_err(io)?;
            counted.push((algo, run.counter));
        }

        let total = |a: Algo| counted.iter().find(|(x, _)| *x == a).map(|(_, c)| *c);
        if let (Some(sf), Some(ff)) = (total(Algo::StandardForward), total(Algo::FlashForward)) {
            writeln!(out, "  forward standard/flash access ratio {:.3}", sf.hbm_total() as f64 / ff.hbm_total() as f64)
                .map_err(io)?;
        }
        if let (Some(sf), Some(sb), Some(ff), Some(fb)) = (
            total(Algo::StandardForward),
            total(Algo::StandardBackward),
            total(Algo::FlashForward),
            total(Algo::FlashBackward),
        ) {
            let std_bytes = byte_report(&sf.merge(&sb), s.element_bytes, s.multiplier);
            let flash_bytes = byte_report(&ff.merge(&fb), s.element_bytes, s.multiplier);
            writeln!(
                out,
                "  fwd+bwd bytes x{} at {} B/elem: standard {:.3} GB, flash {:.3} GB, ratio {:.3}",
                s.multiplier,
                s.element_bytes,
                std_bytes.gigabytes(),
                flash_bytes.gigabytes(),
                std_bytes.total_bytes as f64 / flash_bytes.total_bytes as f64
            )
            .map_err(io)?;
            let std_flops = sf.flops + sb.flops;
            let flash_flops = ff.flops + fb.flops;
            writeln!(
                out,
                "  fwd+bwd FLOPs x{}: standard {:.3} GFLOP, flash {:.3} GFLOP, ratio {:.3}",
                s.multiplier,
                (std_flops * s.multiplier) as f64 / 1e9,
                (flash_flops * s.multiplier) as f64 / 1e9,
                flash_flops as f64 / std_flops as f64
            )
            .map_err(io)?;
        }
    }
    writeln!(out, "{}", if all_ok { "all counts match" } else { "MISMATCH" }).map_err(io)?;
    Ok(all_ok)
}
