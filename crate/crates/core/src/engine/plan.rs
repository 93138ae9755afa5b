use crate::error::{Error, Result};

/// Residency ceiling of the forward inner loop, as a fraction `num/den` of M.
pub const FORWARD_SLACK: (u64, u64) = (3, 2);
/// Residency ceiling of the backward inner loop. The backward keeps four
/// `bc x d` tiles (K_j, V_j and the dK_j, dV_j accumulators) resident, so with
/// the same block sizes it needs roughly twice the forward's SRAM.
pub const BACKWARD_SLACK: (u64, u64) = (3, 1);

/// Optional block-size overrides. Unset sizes come from the capacity formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TileOverrides {
    pub br: Option<usize>,
    pub bc: Option<usize>,
}

/// Block sizes and counts for one `(n, d, M)` problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlan {
    pub n: usize,
    pub d: usize,
    /// Query block length.
    pub br: usize,
    /// Key/value block length.
    pub bc: usize,
    pub tr: usize,
    pub tc: usize,
    pub m_capacity: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl TilePlan {
    /// Peak elements resident during one forward inner iteration:
    /// `K_j, V_j` (2 bc d), `Q_i, O_i` (2 br d), the score tile (br bc, the
    /// exponentiated tile overwrites it) and six length-`br` statistics
    /// (`l_i, m_i`, block max/sum, new max/sum).
    pub fn forward_working_set(&self) -> u64 {
        let (r, c, d) = (self.br as u64, self.bc as u64, self.d as u64);
        2 * c * d + 2 * r * d + r * c + 6 * r
    }

    /// Peak elements resident during one backward inner iteration:
    /// `K_j, V_j, dK_j, dV_j` (4 bc d), `Q_i, O_i, dO_i, dQ_i` (4 br d), the
    /// probability and gradient tiles (2 br bc) and `l_i, m_i, D_i` (3 br).
    pub fn backward_working_set(&self) -> u64 {
        let (r, c, d) = (self.br as u64, self.bc as u64, self.d as u64);
        4 * c * d + 4 * r * d + 2 * r * c + 3 * r
    }

    pub fn forward_ceiling(&self) -> u64 {
        self.m_capacity as u64 * FORWARD_SLACK.0 / FORWARD_SLACK.1
    }

    pub fn backward_ceiling(&self) -> u64 {
        self.m_capacity as u64 * BACKWARD_SLACK.0 / BACKWARD_SLACK.1
    }

    /// Rows `start..end` of query block `i`.
    #[inline]
    pub fn row_block(&self, i: usize) -> (usize, usize) {
        let start = i * self.br;
        (start, (start + self.br).min(self.n))
    }

    /// Rows `start..end` of key/value block `j`.
    #[inline]
    pub fn col_block(&self, j: usize) -> (usize, usize) {
        let start = j * self.bc;
        (start, (start + self.bc).min(self.n))
    }

    fn fits(&self) -> bool {
        self.forward_working_set() <= self.forward_ceiling()
            && self.backward_working_set() <= self.backward_ceiling()
    }
}

fn build(n: usize, d: usize, m: usize, ov: TileOverrides) -> TilePlan {
    let unit = ceil_div(m, 4 * d);
    let bc = ov.bc.unwrap_or(unit).min(n);
    let br = ov.br.unwrap_or(unit.min(d)).min(n);
    TilePlan {
        n,
        d,
        br,
        bc,
        tr: ceil_div(n, br),
        tc: ceil_div(n, bc),
        m_capacity: m,
    }
}

/// Smallest capacity whose plan satisfies both residency ceilings.
pub fn min_feasible_capacity(n: usize, d: usize, ov: TileOverrides) -> usize {
    next_feasible_capacity(n, d, ov, 0)
}

/// Smallest feasible capacity `>= at_least`.
///
/// Feasibility is not monotone in M: just above a multiple of `4d` the
/// rounded-up block length jumps while M barely grows, which can push the
/// working set over its ceiling again.
pub fn next_feasible_capacity(n: usize, d: usize, ov: TileOverrides, at_least: usize) -> usize {
    let need = |p: &TilePlan| {
        let fwd = p.forward_working_set() * FORWARD_SLACK.1;
        let bwd = p.backward_working_set() * BACKWARD_SLACK.1;
        (fwd.div_ceil(FORWARD_SLACK.0)).max(bwd.div_ceil(BACKWARD_SLACK.0)) as usize
    };
    // Block sizes depend on M only through u = ceil(M / 4d); scan u.
    let last = n.max(d) + 1;
    for u in 1..=last {
        let lo = ((u - 1) * 4 * d + 1).max(4 * d).max(at_least);
        let hi = if u == last { usize::MAX } else { u * 4 * d };
        if lo > hi {
            continue;
        }
        let plan = build(n, d, lo, ov);
        let m = need(&plan).max(lo);
        if m <= hi {
            return m;
        }
    }
    unreachable!("the last capacity range is unbounded")
}

/// Block sizes `bc = ceil(M/4d)`, `br = min(ceil(M/4d), d)`, optionally
/// overridden, clamped to `n`, and validated against the residency ceilings.
pub fn plan_tiles(
    n: usize,
    d: usize,
    m_capacity: usize,
    overrides: Option<TileOverrides>,
) -> Result<TilePlan> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!(
            "n and d must be at least 1 (got n={n}, d={d})"
        )));
    }
    let ov = overrides.unwrap_or_default();
    if ov.br == Some(0) || ov.bc == Some(0) {
        return Err(Error::InvalidConfig("block size overrides must be at least 1".into()));
    }
    if m_capacity < 4 * d {
        return Err(Error::CapacityTooSmall {
            capacity: m_capacity,
            min_feasible: min_feasible_capacity(n, d, ov),
            reason: format!("need M >= 4d = {}", 4 * d),
        });
    }
    let plan = build(n, d, m_capacity, ov);
    if !plan.fits() {
        return Err(Error::CapacityTooSmall {
            capacity: m_capacity,
            min_feasible: next_feasible_capacity(n, d, ov, m_capacity),
            reason: format!(
                "br={} bc={} need forward working set {} (ceiling {}) and backward {} (ceiling {})",
                plan.br,
                plan.bc,
                plan.forward_working_set(),
                plan.forward_ceiling(),
                plan.backward_working_set(),
                plan.backward_ceiling()
            ),
        });
    }
    Ok(plan)
}
