//! IDX (MNIST) reader. Big-endian throughout.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDigits<T> {
    /// `n × (rows·cols)`, scaled to `[0, 1]`.
    pub pixels: Matrix<T>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

/// Returns `(n, rows, cols, pixels)`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<(usize, usize, usize, Matrix<T>)> {
    let magic = read_u32(bytes, 0, "image")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "image")? as usize;
    let rows = read_u32(bytes, 8, "image")? as usize;
    let cols = read_u32(bytes, 12, "image")? as usize;
    let len = n * rows * cols;
    let body = bytes.get(16..16 + len).ok_or_else(|| {
        Error::Truncated(format!(
            "expected {len} pixel bytes, found {}",
            bytes.len().saturating_sub(16)
        ))
    })?;
    let data = body.iter().map(|&b| T::of(b as f64 / 255.0)).collect();
    Ok((n, rows, cols, Matrix::new(n, rows * cols, data)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "label")? as usize;
    bytes
        .get(8..8 + n)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::Truncated(format!("expected {n} labels, found {}", bytes.len().saturating_sub(8))))
}

pub fn load_idx<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<RawDigits<T>> {
    let (n, rows, cols, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Ok(RawDigits {
        pixels,
        labels,
        rows,
        cols,
    })
}

/// Encode raw `u8` images as an IDX image file.
pub fn write_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
