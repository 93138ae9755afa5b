use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{
    blocksparse_backward, blocksparse_forward, flash_backward, flash_forward, BlockMask, TilePlan,
};
use crate::error::Result;
use crate::io_model::{
    flop_model, predict_blocksparse_backward_io_for_mask, predict_blocksparse_forward_io_for_mask,
    predict_flash_backward_io, predict_flash_forward_io, predict_standard_backward_io,
    predict_standard_forward_io, AccessCounter, Algo, IoPrediction, MemoryModel,
};
use crate::numeric::{AttnConfig, Matrix};
use crate::reference::{standard_backward, standard_forward, Gradients};

/// Random inputs and cotangent for one attention problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub d_o: Matrix,
}

impl Problem {
    /// Standard normal entries drawn from a ChaCha8 stream keyed by `seed`.
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        Problem { q: draw(), k: draw(), v: draw(), d_o: draw() }
    }
}

#[derive(Debug, Clone)]
pub enum Output {
    Forward(Matrix),
    Backward(Gradients),
}

impl Output {
    pub fn max_abs_diff(&self, other: &Output) -> Result<f64> {
        match (self, other) {
            (Output::Forward(a), Output::Forward(b)) => a.max_abs_diff(b),
            (Output::Backward(a), Output::Backward(b)) => a.max_abs_diff(b),
            _ => Ok(f64::INFINITY),
        }
    }
}

/// Counters of the measured pass only (a backward run does its forward on a
/// separate, discarded model).
#[derive(Debug, Clone)]
pub struct Run {
    pub counter: AccessCounter,
    pub output: Output,
}

/// `cfg` with the block mask folded into its element mask.
pub fn masked_config(cfg: &AttnConfig, bmask: &BlockMask) -> AttnConfig {
    cfg.clone().with_mask(cfg.mask.intersect(&bmask.expand(cfg.n)))
}

pub fn run_algo(
    algo: Algo,
    p: &Problem,
    cfg: &AttnConfig,
    plan: &TilePlan,
    bmask: Option<&BlockMask>,
) -> Result<Run> {
    let dense;
    let bmask = match bmask {
        Some(b) => b,
        None => {
            dense = BlockMask::dense(plan.tr, plan.tc, plan.br, plan.bc);
            &dense
        }
    };
    let mut mem = MemoryModel::new(plan.m_capacity)?;
    let output = match algo {
        Algo::StandardForward => {
            let art = standard_forward(&p.q, &p.k, &p.v, cfg, Some(mem.counter_mut()))?;
            Output::Forward(art.o)
        }
        Algo::StandardBackward => {
            let art = standard_forward(&p.q, &p.k, &p.v, cfg, None)?;
            let g = standard_backward(&art, &p.q, &p.k, &p.v, &p.d_o, cfg, Some(mem.counter_mut()))?;
            Output::Backward(g)
        }
        Algo::FlashForward => Output::Forward(flash_forward(&p.q, &p.k, &p.v, cfg, plan, &mut mem, None)?.o),
        Algo::FlashBackward => {
            let mut fwd = MemoryModel::new(plan.m_capacity)?;
            let saved = flash_forward(&p.q, &p.k, &p.v, cfg, plan, &mut fwd, None)?;
            Output::Backward(flash_backward(&saved, &p.q, &p.k, &p.v, &p.d_o, &mut mem)?)
        }
        Algo::BlockSparseForward => {
            Output::Forward(blocksparse_forward(&p.q, &p.k, &p.v, cfg, plan, bmask, &mut mem)?.o)
        }
        Algo::BlockSparseBackward => {
            let mut fwd = MemoryModel::new(plan.m_capacity)?;
            let saved = blocksparse_forward(&p.q, &p.k, &p.v, cfg, plan, bmask, &mut fwd)?;
            Output::Backward(blocksparse_backward(&saved, &p.q, &p.k, &p.v, &p.d_o, bmask, &mut mem)?)
        }
    };
    Ok(Run { counter: *mem.counter(), output })
}

/// Materialized reference for the same quantity `algo` computes.
pub fn oracle(algo: Algo, p: &Problem, cfg: &AttnConfig, bmask: Option<&BlockMask>) -> Result<Output> {
    let cfg = match (algo.is_block_sparse(), bmask) {
        (true, Some(b)) => masked_config(cfg, b),
        _ => cfg.clone(),
    };
    let art = standard_forward(&p.q, &p.k, &p.v, &cfg, None)?;
    if algo.is_backward() {
        Ok(Output::Backward(standard_backward(&art, &p.q, &p.k, &p.v, &p.d_o, &cfg, None)?))
    } else {
        Ok(Output::Forward(art.o))
    }
}

/// Closed-form traffic for `algo`; block-sparse algorithms use the exact mask
/// (a dense grid when `bmask` is `None`).
pub fn prediction(algo: Algo, n: usize, d: usize, plan: &TilePlan, bmask: Option<&BlockMask>) -> IoPrediction {
    let dense;
    let bmask = match bmask {
        Some(b) => b,
        None => {
            dense = BlockMask::dense(plan.tr, plan.tc, plan.br, plan.bc);
            &dense
        }
    };
    match algo {
        Algo::StandardForward => predict_standard_forward_io(n, d),
        Algo::StandardBackward => predict_standard_backward_io(n, d),
        Algo::FlashForward => predict_flash_forward_io(n, d, plan),
        Algo::FlashBackward => predict_flash_backward_io(n, d, plan),
        Algo::BlockSparseForward => predict_blocksparse_forward_io_for_mask(n, d, plan, bmask),
        Algo::BlockSparseBackward => predict_blocksparse_backward_io_for_mask(n, d, plan, bmask),
    }
}

pub fn flops(algo: Algo, n: usize, d: usize, plan: &TilePlan, bmask: Option<&BlockMask>) -> Result<u64> {
    let dense;
    let bmask = match (algo.is_block_sparse(), bmask) {
        (true, None) => {
            dense = BlockMask::dense(plan.tr, plan.tc, plan.br, plan.bc);
            Some(&dense)
        }
        (_, b) => b,
    };
    flop_model(algo, n, d, plan, bmask)
}
