//! `VTNK` container. Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `VTNK` |
//! | 2 | version (u16) = 1 |
//! | 1 | dtype (u8), 0 = f32 |
//! | 1 | rank (u8) |
//! | 4·rank | dims (u32 each) |
//! | 4·∏dims | row-major f32 payload |

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array3};

use super::{io_err, IoError};
use crate::LatentTensor;

pub const MAGIC: [u8; 4] = *b"VTNK";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// Any-rank f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl InterchangeTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, IoError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(IoError::ShapeMismatch(format!(
                "dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Narrows to f32.
    pub fn from_latent(t: &LatentTensor) -> Self {
        let (c, h, w) = t.dims();
        Self {
            dims: vec![c, h, w],
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_latent(&self) -> Result<LatentTensor, IoError> {
        let &[c, h, w] = self.dims.as_slice() else {
            return Err(IoError::RankMismatch {
                expected: 3,
                got: self.dims.len(),
            });
        };
        let data = Array3::from_shape_vec((c, h, w), self.data.iter().map(|&v| v as f64).collect())
            .map_err(|e| IoError::ShapeMismatch(e.to_string()))?;
        Ok(LatentTensor::new(data)?)
    }
}

pub fn encode_tensor(t: &InterchangeTensor) -> Result<Vec<u8>, IoError> {
    let rank = u8::try_from(t.dims.len()).map_err(|_| IoError::TooLarge(format!("rank {}", t.dims.len())))?;
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(rank);
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| IoError::TooLarge(format!("dimension {d}")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<InterchangeTensor, IoError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(IoError::TruncatedPayload {
                expected: n,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(IoError::BadMagic(magic));
    }
    need(8)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(IoError::UnsupportedDtype(bytes[6]));
    }
    let rank = bytes[7] as usize;
    let header = 8 + 4 * rank;
    need(header)?;
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::TooLarge(format!("dims {dims:?}")))?;
    let total = header + count;
    need(total)?;
    if bytes.len() > total {
        return Err(IoError::TrailingBytes(bytes.len() - total));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(InterchangeTensor { dims, data })
}

pub fn write_interchange(path: &Path, t: &InterchangeTensor) -> Result<(), IoError> {
    fs::write(path, encode_tensor(t)?).map_err(io_err(path))
}

pub fn read_interchange(path: &Path) -> Result<InterchangeTensor, IoError> {
    decode_tensor(&fs::read(path).map_err(io_err(path))?)
}

/// Reads a rank-3 `C×H×W` tensor.
pub fn read_tensor(path: &Path) -> Result<LatentTensor, IoError> {
    read_interchange(path)?.to_latent()
}

/// Values are narrowed to f32.
pub fn write_tensor(path: &Path, tensor: &LatentTensor) -> Result<(), IoError> {
    write_interchange(path, &InterchangeTensor::from_latent(tensor))
}

/// Prompt embeddings are rank-1 tensors.
pub fn read_prompt_embedding(path: &Path) -> Result<Array1<f64>, IoError> {
    let t = read_interchange(path)?;
    if t.dims.len() != 1 {
        return Err(IoError::RankMismatch {
            expected: 1,
            got: t.dims.len(),
        });
    }
    Ok(t.data.iter().map(|&v| v as f64).collect())
}

pub fn write_prompt_embedding(path: &Path, embedding: &Array1<f64>) -> Result<(), IoError> {
    write_interchange(
        path,
        &InterchangeTensor {
            dims: vec![embedding.len()],
            data: embedding.iter().map(|&v| v as f32).collect(),
        },
    )
}
