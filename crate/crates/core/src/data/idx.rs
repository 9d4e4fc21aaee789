//! Big-endian IDX containers (the MNIST distribution format).
//!
//! Images: magic `0x00000803`, u32 count, u32 rows, u32 cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`,
//! u32 count, then `count` unsigned bytes.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], what: &'static str, expected_magic: u32, words: usize) -> Result<Vec<u32>> {
    let needed = 4 * words;
    if bytes.len() < 4 {
        return Err(Error::Truncated { what, needed, found: bytes.len() });
    }
    let magic = BigEndian::read_u32(bytes);
    if magic != expected_magic {
        return Err(Error::WrongMagic { what, expected: expected_magic, found: magic });
    }
    if bytes.len() < needed {
        return Err(Error::Truncated { what, needed, found: bytes.len() });
    }
    Ok((1..words).map(|w| BigEndian::read_u32(&bytes[4 * w..])).collect())
}

fn payload<'a>(bytes: &'a [u8], what: &'static str, offset: usize, len: usize) -> Result<&'a [u8]> {
    let needed = offset.saturating_add(len);
    if bytes.len() < needed {
        return Err(Error::Truncated { what, needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::Format {
            what,
            detail: format!("{} trailing bytes after payload", bytes.len() - needed),
        });
    }
    Ok(&bytes[offset..])
}

/// Returns (count, rows, cols, pixel bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let what = "IDX image file";
    let h = header(bytes, what, IDX_IMAGES_MAGIC, 4)?;
    let (count, rows, cols) = (h[0] as usize, h[1] as usize, h[2] as usize);
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Format { what, detail: format!("{count}x{rows}x{cols} pixels overflow") })?;
    let pixels = payload(bytes, what, 16, len)?;
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let what = "IDX label file";
    let h = header(bytes, what, IDX_LABELS_MAGIC, 2)?;
    payload(bytes, what, 8, h[0] as usize)
}

/// Builds a dataset from in-memory IDX image and label containers.
/// Pixels are divided by 255 and images flattened row-major.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if label_bytes.len() != count {
        return Err(Error::CountMismatch { images: count, labels: label_bytes.len() });
    }
    let features = Matrix::from_vec(count, rows * cols, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, class_count)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels)
}
