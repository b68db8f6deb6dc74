//! Checkpoint layout (little-endian):
//!
//! ```text
//! "OWSP" | u32 version=1
//! u32 input_dim | u32 embed_dim | u32 n_attention_layers | u32 n_heads
//! f64 dropout_rate | u64 seed | u64 n_params
//! n_params × f32, tensors in `ParamSet::named_tensors` order
//! ```

use std::fs;
use std::path::Path;

use super::{EncoderConfig, ParamSet};
use crate::error::{FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OWSP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 16 + 8 + 8 + 8;

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let c = &params.config;
    let n = params.num_params();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * n);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.input_dim, c.embed_dim, c.n_attention_layers, c.n_heads] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout_rate.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (_, t) in params.named_tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ParamSet> {
    if buf.len() < HEADER_BYTES {
        return Err(FormatError::Truncated {
            needed: HEADER_BYTES,
            available: buf.len(),
        }
        .into());
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        }
        .into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let config = EncoderConfig {
        input_dim: u32_at(8) as usize,
        embed_dim: u32_at(12) as usize,
        n_attention_layers: u32_at(16) as usize,
        n_heads: u32_at(20) as usize,
        dropout_rate: f64::from_le_bytes(buf[24..32].try_into().unwrap()),
        seed: u64_at(32),
    };
    config
        .validate()
        .map_err(|e| FormatError::Malformed(format!("checkpoint config: {e}")))?;
    let mut params = ParamSet::zeros(&config);
    let n = params.num_params();
    let stored = u64_at(40) as usize;
    if stored != n {
        return Err(FormatError::DimensionMismatch {
            expected: n,
            found: stored,
        }
        .into());
    }
    let needed = HEADER_BYTES + 4 * n;
    if buf.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            available: buf.len(),
        }
        .into());
    }
    if buf.len() > needed {
        return Err(FormatError::TrailingBytes(buf.len() - needed).into());
    }
    let flat: Vec<f64> = buf[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    params.load_flat(&flat);
    Ok(params)
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_checkpoint(&buf)
}
