//! Binary tensor dumps.
//!
//! Layout: the 8-byte magic `STCHTNSR`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then the elements as little-endian `f32`
//! in row-major order.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"STCHTNSR";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic, not a tensor dump")]
    BadMagic,
    #[error("truncated tensor dump")]
    Truncated,
    #[error("payload holds {found} elements, dims need {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("expected rank {expected}, found {found}")]
    Rank { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorDump {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::SizeMismatch { expected, found: data.len() });
        }
        Ok(Self { dims, data })
    }

    /// Narrows to `f32`; dumps are for inspection and hashing, not resumption.
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        let (rows, cols) = m.dim();
        Self { dims: vec![rows, cols], data: m.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>, TensorError> {
        if self.dims.len() != 2 {
            return Err(TensorError::Rank { expected: 2, found: self.dims.len() });
        }
        let data = self.data.iter().map(|&v| v as f64).collect();
        Array2::from_shape_vec((self.dims[0], self.dims[1]), data)
            .map_err(|_| TensorError::SizeMismatch { expected: self.dims[0] * self.dims[1], found: self.data.len() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 12 {
            return Err(TensorError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let read_u32 = |at: usize| -> Result<u32, TensorError> {
            bytes.get(at..at + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).ok_or(TensorError::Truncated)
        };
        let rank = read_u32(8)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(read_u32(12 + 4 * i)? as usize);
        }
        let start = 12 + 4 * rank;
        let payload = bytes.get(start..).ok_or(TensorError::Truncated)?;
        if payload.len() % 4 != 0 {
            return Err(TensorError::Truncated);
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(dims, data)
    }

    pub fn read(path: &Path) -> Result<Self, TensorError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
