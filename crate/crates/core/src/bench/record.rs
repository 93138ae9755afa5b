use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// One sweep row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub algo: String,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Empty for the materialized algorithms, which do not tile.
    pub bc: Option<usize>,
    pub br: Option<usize>,
    pub sparsity: f64,
    pub hbm_read_elems: u64,
    pub hbm_write_elems: u64,
    pub hbm_bytes: u64,
    pub flops: u64,
    pub peak_sram_elems: u64,
    pub wall_ms_median: f64,
    /// Empty when `n` is above the oracle cap.
    pub max_abs_err_vs_oracle: Option<f64>,
}

pub const CSV_HEADER: &str = "algo,n,d,m,bc,br,sparsity,hbm_read_elems,hbm_write_elems,hbm_bytes,flops,peak_sram_elems,wall_ms_median,max_abs_err_vs_oracle";

pub fn write_records<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wtr.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
