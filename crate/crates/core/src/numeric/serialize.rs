//! Matrix test-vector formats.
//!
//! * CSV: one matrix row per line, comma separated, no header.
//! * Binary: `b"TATN"`, `u32` LE rows, `u32` LE cols, then `rows * cols`
//!   little-endian IEEE-754 binary64 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 4] = b"TATN";

pub fn write_binary<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("too many columns".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("truncated payload for {rows}x{cols} matrix"))
            }
            _ => Error::Io(e),
        })?;
        let v = f64::from_le_bytes(buf);
        if v.is_nan() {
            return Err(Error::NaN {
                context: "binary matrix payload".into(),
            });
        }
        data.push(v);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after matrix payload".into()));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_csv<W: Write>(m: &Matrix, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.rows() {
        wr.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|field| {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Format(format!("line {}: `{field}` is not a number", line + 1))
                })?;
                if v.is_nan() {
                    return Err(Error::NaN {
                        context: format!("csv line {}", line + 1),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Reads either format, chosen by the file's leading magic bytes.
pub fn load(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.starts_with(MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_csv(bytes.as_slice())
    }
}

/// Writes binary when the extension is `.tatn` or `.bin`, CSV otherwise.
pub fn save(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let w = BufWriter::new(File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("tatn") | Some("bin") => write_binary(m, w),
        _ => write_csv(m, w),
    }
}
