//! Binary checkpoint: magic, scalar width, version, dimension, little-endian
//! weights, then an FNV-1a checksum over everything before it.

use std::path::Path;

use super::features::fnv1a;
use super::linear::LinearPolicy;
use crate::Scalar;

const MAGIC: &[u8; 8] = b"DGCKPT01";
const HEADER: usize = 8 + 1 + 8 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode<S: Scalar>(p: &LinearPolicy<S>) -> Vec<u8> {
    let width = std::mem::size_of::<S>() as u8;
    let mut out = Vec::with_capacity(HEADER + p.weights.len() * width as usize + 8);
    out.extend_from_slice(MAGIC);
    out.push(width);
    out.extend_from_slice(&p.version.to_le_bytes());
    out.extend_from_slice(&(p.weights.len() as u64).to_le_bytes());
    for w in &p.weights {
        if width == 4 {
            out.extend_from_slice(&(w.f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&w.f64().to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<LinearPolicy<S>, CheckpointError> {
    let bad = |m: &str| CheckpointError::Corrupt(m.to_string());
    if bytes.len() < HEADER + 8 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(bad("checksum mismatch"));
    }
    let width = body[8] as usize;
    if width != 4 && width != 8 {
        return Err(bad("unsupported scalar width"));
    }
    let version = u64::from_le_bytes(body[9..17].try_into().expect("8 bytes"));
    let dim = u64::from_le_bytes(body[17..25].try_into().expect("8 bytes")) as usize;
    let payload = &body[HEADER..];
    if payload.len() != dim.checked_mul(width).ok_or_else(|| bad("dimension overflow"))? {
        return Err(bad("payload length does not match dimension"));
    }
    let weights = payload
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                S::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            } else {
                S::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))
            }
        })
        .collect::<Vec<S>>();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(bad("non-finite weight"));
    }
    Ok(LinearPolicy { weights, version })
}

pub fn save<S: Scalar>(p: &LinearPolicy<S>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(p))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<LinearPolicy<S>, CheckpointError> {
    decode(&std::fs::read(path)?)
}
