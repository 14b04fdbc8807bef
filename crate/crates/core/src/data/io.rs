//! Binary and CSV dataset formats.
//!
//! Binary layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `DPAD` |
//! | 2     | format version (u16) |
//! | 8     | n (u64) |
//! | 8     | p (u64) |
//! | 1     | 1 if labels follow, else 0 |
//! | 8·n·p | row-major f64 data |
//! | 8·n   | i64 labels, when flagged |

use std::fmt::Write as _;
use std::path::Path;

use super::Dataset;
use crate::error::{DpaError, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"DPAD";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 8 + 1;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let labels = ds.labels.as_deref();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * ds.x.len() + 8 * labels.map_or(0, <[i64]>::len));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.n() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.p() as u64).to_le_bytes());
    out.push(u8::from(labels.is_some()));
    for v in ds.x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in labels.unwrap_or_default() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode_dataset(bytes: &[u8], name: &str) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DpaError::Format("bad magic: not a DPAD dataset".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DpaError::Format(format!(
            "truncated payload: header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(DpaError::Format(format!("unsupported format version {version}")));
    }
    let n = read_u64(bytes, 6);
    let p = read_u64(bytes, 14);
    let flag = bytes[22];
    if flag > 1 {
        return Err(DpaError::Format(format!("invalid label flag {flag}")));
    }
    let cells = n
        .checked_mul(p)
        .and_then(|c| c.checked_add(if flag == 1 { n } else { 0 }))
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| DpaError::Format(format!("header declares an impossible size {n} x {p}")))?;
    let expected = HEADER_LEN + cells;
    if bytes.len() < expected {
        return Err(DpaError::Format(format!(
            "truncated payload: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(DpaError::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let (n, p) = (n as usize, p as usize);
    let body = &bytes[HEADER_LEN..];
    let data = body[..8 * n * p]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let labels = (flag == 1).then(|| {
        body[8 * n * p..]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    });
    Dataset::new(name, Matrix::new(n, p, data)?, labels)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    decode_dataset(&bytes, name)
}

/// Parses CSV text with a header row. A final column named `label` is read
/// as integer labels. Rows and columns in errors are 1-based, counting the
/// header as row 1.
pub fn import_csv(text: &str, name: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| DpaError::Format("empty CSV".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = columns.last() == Some(&"label");
    let p = columns.len() - usize::from(has_label);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (line_no, line) in lines {
        let row = line_no + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(DpaError::Csv {
                row,
                col: cells.len().min(columns.len()) + 1,
                msg: format!("expected {} fields, found {}", columns.len(), cells.len()),
            });
        }
        for (j, cell) in cells[..p].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DpaError::Csv {
                row,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            data.push(v);
        }
        if has_label {
            let cell = cells[p];
            let l: i64 = cell.parse().map_err(|_| DpaError::Csv {
                row,
                col: p + 1,
                msg: format!("label is not an integer: {cell:?}"),
            })?;
            labels.push(l);
        }
        n += 1;
    }
    Dataset::new(name, Matrix::new(n, p, data)?, has_label.then_some(labels))
}

/// Writes a header `x0,...,x{p-1}[,label]` and one row per sample. Values
/// use the shortest representation that parses back to the same f64.
pub fn export_csv(ds: &Dataset) -> String {
    let mut out = (0..ds.p()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    if ds.labels.is_some() {
        if ds.p() > 0 {
            out.push(',');
        }
        out.push_str("label");
    }
    out.push('\n');
    for i in 0..ds.n() {
        let row = ds.x.row(i).iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        out.push_str(&row);
        if let Some(l) = &ds.labels {
            if ds.p() > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", l[i]);
        }
        out.push('\n');
    }
    out
}
