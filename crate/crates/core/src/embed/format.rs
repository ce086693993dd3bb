//! The EMB1 binary container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | field                         |
//! |--------|-------------------------------|
//! | 0..4   | magic `"EMB1"`                |
//! | 4..8   | version, `u32` = 1            |
//! | 8..12  | row count N, `u32`            |
//! | 12..16 | dimension D, `u32`            |
//! | 16     | dtype, `u8` = 0 (float32 LE)  |
//! | 17..20 | zero padding                  |
//! | 20..   | N·D `f32` values, row-major   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::RowMatrix;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: usize = 20;
const DTYPE_F32: u8 = 0;

/// N×D row-major matrix of `f32` embeddings. Row `i` is sample `i` of the
/// owning manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Precondition("ragged embedding rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Copy of the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn to_f64(&self) -> RowMatrix {
        RowMatrix::from_vec(self.rows, self.dim, self.data.iter().map(|&v| f64::from(v)).collect())
    }

    /// `f64` copy with every row scaled to unit L2 norm (zero rows stay zero).
    pub fn normalized(&self) -> RowMatrix {
        let mut m = self.to_f64();
        for i in 0..m.rows() {
            crate::math::normalize_in_place(m.row_mut(i));
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB1_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&EMB1_MAGIC);
        out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&[0, 0, 0]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| fail(bytes.len(), format!("truncated header, need {EMB1_HEADER_LEN} bytes")))
        };

        if bytes.len() < 4 {
            return Err(fail(bytes.len(), "truncated header, missing magic".into()));
        }
        if bytes[..4] != EMB1_MAGIC {
            return Err(fail(
                0,
                format!(
                    "bad magic {:?}, expected \"EMB1\"",
                    String::from_utf8_lossy(&bytes[..4])
                ),
            ));
        }
        let version = u32_at(4)?;
        if version != EMB1_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let rows = u32_at(8)? as usize;
        let dim = u32_at(12)? as usize;
        if bytes.len() < EMB1_HEADER_LEN {
            return Err(fail(
                bytes.len(),
                format!("truncated header, need {EMB1_HEADER_LEN} bytes"),
            ));
        }
        if dim == 0 {
            return Err(fail(12, "dimension must be at least 1".into()));
        }
        if bytes[16] != DTYPE_F32 {
            return Err(fail(16, format!("dtype flag {} is not float32 (0)", bytes[16])));
        }
        if let Some(p) = bytes[17..20].iter().position(|&b| b != 0) {
            return Err(fail(17 + p, "non-zero header padding".into()));
        }

        let payload = (rows as u64) * (dim as u64) * 4;
        let expected = EMB1_HEADER_LEN as u64 + payload;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(fail(
                bytes.len(),
                format!("truncated payload: expected {expected} bytes for {rows}x{dim}, found {actual}"),
            ));
        }
        if actual > expected {
            return Err(fail(
                expected as usize,
                format!("{} trailing bytes after payload", actual - expected),
            ));
        }

        let mut data = Vec::with_capacity(rows * dim);
        for (k, chunk) in bytes[EMB1_HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(fail(EMB1_HEADER_LEN + 4 * k, format!("non-finite value {v}")));
            }
            data.push(v);
        }
        Ok(Self { rows, dim, data })
    }
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}
