//! Binary dataset cache.
//!
//! ```text
//! magic        8 bytes  "ADVSELD1"
//! rows         u64 LE
//! cols         u64 LE
//! class_count  u32 LE
//! features     rows * cols f64 bit patterns, u64 LE, row-major
//! labels       rows * u32 LE
//! names        u32 LE count (0 = none), then per name: u32 LE byte length + UTF-8
//! ```

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CACHE_MAGIC: &[u8; 8] = b"ADVSELD1";

pub fn to_bytes(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + d.features().as_slice().len() * 8 + d.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.write_u64::<LittleEndian>(d.len() as u64).unwrap();
    out.write_u64::<LittleEndian>(d.dims() as u64).unwrap();
    out.write_u32::<LittleEndian>(d.class_count() as u32).unwrap();
    for &v in d.features().as_slice() {
        out.write_u64::<LittleEndian>(v.to_bits()).unwrap();
    }
    for &l in d.labels() {
        out.write_u32::<LittleEndian>(l as u32).unwrap();
    }
    let names = d.label_names().unwrap_or(&[]);
    out.write_u32::<LittleEndian>(names.len() as u32).unwrap();
    for n in names {
        out.write_u32::<LittleEndian>(n.len() as u32).unwrap();
        out.extend_from_slice(n.as_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let what = "dataset cache";
    let truncated = || Error::Truncated { what, needed: bytes.len() + 1, found: bytes.len() };
    if bytes.len() < 28 {
        return Err(Error::Truncated { what, needed: 28, found: bytes.len() });
    }
    if &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Format { what, detail: "bad magic".into() });
    }
    let mut r = &bytes[8..];
    let rows = r.read_u64::<LittleEndian>().map_err(|_| truncated())? as usize;
    let cols = r.read_u64::<LittleEndian>().map_err(|_| truncated())? as usize;
    let classes = r.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
    let body = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| rows.checked_mul(4).and_then(|l| n.checked_add(l)))
        .ok_or_else(|| Error::Format { what, detail: "size overflow".into() })?;
    if r.len() < body.saturating_add(4) {
        return Err(Error::Truncated { what, needed: body.saturating_add(32), found: bytes.len() });
    }
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| f64::from_bits(r.read_u64::<LittleEndian>().unwrap()))
        .collect();
    let labels: Vec<usize> = (0..rows)
        .map(|_| r.read_u32::<LittleEndian>().unwrap() as usize)
        .collect();
    let n_names = r.read_u32::<LittleEndian>().unwrap() as usize;
    // each name needs at least its 4-byte length prefix
    let mut names = Vec::with_capacity(n_names.min(r.len() / 4));
    for _ in 0..n_names {
        let len = r.read_u32::<LittleEndian>().map_err(|_| truncated())? as usize;
        if r.len() < len {
            return Err(truncated());
        }
        let s = std::str::from_utf8(&r[..len]).map_err(|e| Error::Format { what, detail: e.to_string() })?;
        names.push(s.to_string());
        r = &r[len..];
    }
    if !r.is_empty() {
        return Err(Error::Format { what, detail: format!("{} trailing bytes", r.len()) });
    }
    let d = Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, classes)?;
    if names.is_empty() {
        Ok(d)
    } else {
        d.with_label_names(names)
    }
}

pub fn save(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(d)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
