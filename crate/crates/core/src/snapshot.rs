//! The `.wtrj` trajectory container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WTRJ"  u32 version (= 1)
//! repeated per layer:
//!     u32 layer_index  u32 n_steps  u32 neurons  u32 dim
//!     n_steps * neurons * dim  f64, step-major then neuron-minor
//! u32 CRC-32 (IEEE) of every byte between the version word and the CRC
//! ```
//!
//! The layer count is implied by the payload length.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::nn::TrajectoryCloud;

pub const MAGIC: &[u8; 4] = b"WTRJ";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a trajectory file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported trajectory format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated trajectory file: {0}")]
    Truncated(String),
    #[error("corrupt trajectory file: crc32 {found:08x} does not match stored {stored:08x}")]
    Corrupt { stored: u32, found: u32 },
    #[error("layer {0} contains non-finite weights")]
    NonFinite(usize),
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode(layers: &[TrajectoryCloud]) -> Result<Vec<u8>, SnapshotError> {
    let floats: usize = layers.iter().map(|l| l.points.as_slice().len()).sum();
    let mut out = Vec::with_capacity(12 + 16 * layers.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for layer in layers {
        let words = [layer.layer_index, layer.steps, layer.neurons, layer.dim];
        for w in words {
            let w = u32::try_from(w).map_err(|_| SnapshotError::BadLayer {
                layer: layer.layer_index,
                reason: format!("dimension {w} does not fit in u32"),
            })?;
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in layer.points.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn write<W: Write>(layers: &[TrajectoryCloud], mut sink: W) -> Result<(), SnapshotError> {
    sink.write_all(&encode(layers)?)?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TrajectoryCloud>, SnapshotError> {
    if bytes.len() < 12 {
        return Err(SnapshotError::Truncated(format!(
            "{} bytes is shorter than header plus checksum",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    let payload = &bytes[8..crc_at];
    let found = crc32fast::hash(payload);
    if stored != found {
        return Err(SnapshotError::Corrupt { stored, found });
    }

    let mut layers = Vec::new();
    let mut pos = 0;
    let word = |at: usize| u32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as usize;
    while pos < payload.len() {
        if payload.len() - pos < 16 {
            return Err(SnapshotError::Truncated("partial layer header".into()));
        }
        let (layer_index, steps, neurons, dim) =
            (word(pos), word(pos + 4), word(pos + 8), word(pos + 12));
        pos += 16;
        let count = steps
            .checked_mul(neurons)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| SnapshotError::BadLayer {
                layer: layer_index,
                reason: "dimensions overflow".into(),
            })?;
        let nbytes = count * 8;
        if payload.len() - pos < nbytes {
            return Err(SnapshotError::Truncated(format!(
                "layer {layer_index} needs {nbytes} bytes, {} remain",
                payload.len() - pos
            )));
        }
        let data: Vec<f64> = payload[pos..pos + nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += nbytes;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SnapshotError::NonFinite(layer_index));
        }
        let cloud = TrajectoryCloud::new(layer_index, steps, neurons, dim, data).map_err(|e| {
            SnapshotError::BadLayer {
                layer: layer_index,
                reason: e.to_string(),
            }
        })?;
        layers.push(cloud);
    }
    Ok(layers)
}

pub fn read<R: Read>(mut source: R) -> Result<Vec<TrajectoryCloud>, SnapshotError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}
