//! `EPL1` latent files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "EPL1"
//! rank    u32
//! dims    rank x u32
//! payload product(dims) x f32
//! ```
//!
//! The file must end exactly after the payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::latent::LatentTensor;

pub const MAGIC: [u8; 4] = *b"EPL1";

/// Serializes `x`, narrowing every value to binary32.
pub fn encode_latent(x: &LatentTensor) -> Result<Vec<u8>> {
    let rank = u32::try_from(x.shape().len()).map_err(|_| {
        Error::ShapeMismatch(format!("rank {} does not fit in u32", x.shape().len()))
    })?;
    let mut out = Vec::with_capacity(8 + 4 * x.shape().len() + 4 * x.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in x.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::ShapeMismatch(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (index, &v) in x.data().iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

fn need(bytes: &[u8], needed: usize) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

/// Parses an `EPL1` byte buffer. Never panics on malformed input.
pub fn decode_latent(bytes: &[u8]) -> Result<LatentTensor> {
    need(bytes, 8)?;
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rank = u32_at(bytes, 4) as usize;
    if rank == 0 {
        return Err(Error::ShapeMismatch("rank 0 latent".into()));
    }
    let header =
        rank.checked_mul(4)
            .and_then(|n| n.checked_add(8))
            .ok_or(Error::TruncatedFile {
                needed: usize::MAX,
                available: bytes.len(),
            })?;
    need(bytes, header)?;
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32_at(bytes, 8 + 4 * i) as usize)
        .collect();

    let total = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(header))
        .ok_or(Error::TruncatedFile {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(Error::TrailingBytes(bytes.len() - total));
    }

    let data: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    LatentTensor::new(shape, data)
}

pub fn write_latent(path: impl AsRef<Path>, x: &LatentTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_latent(x)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_latent(&bytes)
}
