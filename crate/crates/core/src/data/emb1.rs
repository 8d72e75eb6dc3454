//! EMB1: a minimal little-endian `f32` matrix file.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"EMB1"
//! 4       4     u32 LE version (= 1)
//! 8       4     u32 LE row count
//! 12      4     u32 LE dim
//! 16      4*r*d f32 LE payload, row-major
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::DataError;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Emb1Error {
    #[error("bad magic bytes {found:?} (expected \"EMB1\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported EMB1 version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: header declares {expected} payload bytes, file has {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingData { extra: usize },
    #[error("array of {rows}x{dim} does not fit the u32 header fields")]
    TooLarge { rows: usize, dim: usize },
}

/// Row-major `rows x dim` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(DataError::Validation(format!(
                "matrix of {rows}x{dim} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(DataError::DimMismatch { what: format!("row {i}"), expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size.
        let dim = self.dim.max(1);
        self.data.chunks_exact(dim).take(self.rows)
    }

    /// Bitwise comparison, so that `-0.0 != 0.0` and NaN payloads count.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.dim == other.dim
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn encode(m: &Matrix) -> Result<Vec<u8>, Emb1Error> {
    let too_large = || Emb1Error::TooLarge { rows: m.rows, dim: m.dim };
    let rows = u32::try_from(m.rows).map_err(|_| too_large())?;
    let dim = u32::try_from(m.dim).map_err(|_| too_large())?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for x in &m.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Matrix, Emb1Error> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Emb1Error::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Emb1Error::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Emb1Error::UnsupportedVersion(version));
    }
    let rows = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    let expected = rows * dim * 4;
    let actual = bytes.len() - HEADER_LEN;
    if actual < expected {
        return Err(Emb1Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Emb1Error::TrailingData { extra: actual - expected });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Matrix { rows, dim, data })
}

pub fn write_array(path: &Path, m: &Matrix) -> Result<(), DataError> {
    let bytes = encode(m).map_err(|source| DataError::Emb1 { path: path.display().to_string(), source })?;
    fs::write(path, bytes).map_err(|source| DataError::io(path, source))
}

pub fn read_array(path: &Path) -> Result<Matrix, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::io(path, source))?;
    decode(&bytes).map_err(|source| DataError::Emb1 { path: path.display().to_string(), source })
}
