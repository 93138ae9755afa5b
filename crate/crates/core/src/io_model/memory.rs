use serde::Serialize;

use crate::error::{Error, Result};

/// Element-granular ledger of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessCounter {
    pub hbm_read_elems: u64,
    pub hbm_write_elems: u64,
    pub flops: u64,
    pub peak_resident_elems: u64,
}

impl AccessCounter {
    #[inline]
    pub fn add_reads(&mut self, elems: u64) {
        self.hbm_read_elems += elems;
    }

    #[inline]
    pub fn add_writes(&mut self, elems: u64) {
        self.hbm_write_elems += elems;
    }

    #[inline]
    pub fn add_flops(&mut self, flops: u64) {
        self.flops += flops;
    }

    #[inline]
    pub fn observe_resident(&mut self, resident: u64) {
        self.peak_resident_elems = self.peak_resident_elems.max(resident);
    }

    pub fn hbm_total(&self) -> u64 {
        self.hbm_read_elems + self.hbm_write_elems
    }

    /// Combines counters of independent runs (e.g. separate heads). Traffic
    /// and FLOPs add; peak residency is the max, since each run owns its SRAM.
    pub fn merge(&self, other: &AccessCounter) -> AccessCounter {
        AccessCounter {
            hbm_read_elems: self.hbm_read_elems + other.hbm_read_elems,
            hbm_write_elems: self.hbm_write_elems + other.hbm_write_elems,
            flops: self.flops + other.flops,
            peak_resident_elems: self.peak_resident_elems.max(other.peak_resident_elems),
        }
    }
}

/// Simulated two-level hierarchy: HBM traffic counting plus SRAM residency
/// tracking against a ceiling.
///
/// `load` moves elements HBM -> SRAM (a read that becomes resident), `store`
/// moves SRAM -> HBM (a write; the buffer stays resident until `release`),
/// `acquire` allocates on-chip scratch without traffic.
#[derive(Debug, Clone)]
pub struct MemoryModel {
    m_capacity: usize,
    element_bytes: u64,
    counter: AccessCounter,
    resident: u64,
    ceiling: u64,
    hbm_allocated: u64,
}

impl MemoryModel {
    pub const DEFAULT_ELEMENT_BYTES: u64 = 2;

    pub fn new(m_capacity: usize) -> Result<Self> {
        if m_capacity == 0 {
            return Err(Error::InvalidConfig("SRAM capacity M must be at least 1".into()));
        }
        Ok(Self {
            m_capacity,
            element_bytes: Self::DEFAULT_ELEMENT_BYTES,
            counter: AccessCounter::default(),
            resident: 0,
            ceiling: u64::MAX,
            hbm_allocated: 0,
        })
    }

    pub fn with_element_bytes(mut self, bytes: u64) -> Self {
        self.element_bytes = bytes;
        self
    }

    pub fn m_capacity(&self) -> usize {
        self.m_capacity
    }

    pub fn element_bytes(&self) -> u64 {
        self.element_bytes
    }

    pub fn counter(&self) -> &AccessCounter {
        &self.counter
    }

    pub fn resident(&self) -> u64 {
        self.resident
    }

    pub fn ceiling(&self) -> u64 {
        self.ceiling
    }

    /// Elements allocated in HBM by algorithms run against this model
    /// (outputs plus auxiliary state; inputs are not counted).
    pub fn hbm_allocated(&self) -> u64 {
        self.hbm_allocated
    }

    /// Sets the residency ceiling for the next run. Fails if already exceeded.
    pub fn set_ceiling(&mut self, ceiling: u64) -> Result<()> {
        self.ceiling = ceiling;
        self.check()
    }

    /// Clears traffic, residency and allocation tracking; keeps capacity.
    pub fn reset(&mut self) {
        self.counter = AccessCounter::default();
        self.resident = 0;
        self.hbm_allocated = 0;
        self.ceiling = u64::MAX;
    }

    /// Drops all residency and lifts the ceiling after a run fails midway.
    /// Traffic already charged is kept.
    pub fn abort_run(&mut self) {
        self.resident = 0;
        self.ceiling = u64::MAX;
    }

    pub fn load(&mut self, elems: usize) -> Result<()> {
        self.counter.add_reads(elems as u64);
        self.acquire(elems)
    }

    pub fn store(&mut self, elems: usize) {
        self.counter.add_writes(elems as u64);
    }

    /// HBM read that is consumed in a streaming fashion (not tracked as resident).
    pub fn read_streaming(&mut self, elems: usize) {
        self.counter.add_reads(elems as u64);
    }

    pub fn acquire(&mut self, elems: usize) -> Result<()> {
        self.resident += elems as u64;
        self.counter.observe_resident(self.resident);
        self.check()
    }

    pub fn release(&mut self, elems: usize) {
        debug_assert!(self.resident >= elems as u64, "releasing more than resident");
        self.resident = self.resident.saturating_sub(elems as u64);
    }

    pub fn hbm_alloc(&mut self, elems: usize) {
        self.hbm_allocated += elems as u64;
    }

    #[inline]
    pub fn flops(&mut self, n: u64) {
        self.counter.add_flops(n);
    }

    pub fn counter_mut(&mut self) -> &mut AccessCounter {
        &mut self.counter
    }

    fn check(&self) -> Result<()> {
        if self.resident > self.ceiling {
            return Err(Error::CapacityViolation {
                resident: self.resident,
                ceiling: self.ceiling,
                capacity: self.m_capacity,
            });
        }
        Ok(())
    }
}
