//! Training-state layout (little-endian). Unlike the f32 checkpoint this
//! keeps everything needed to continue a run bit-for-bit:
//!
//! ```text
//! "OWST" | u32 version=1 | u32 epochs_done
//! u32 input_dim | u32 embed_dim | u32 n_attention_layers | u32 n_heads
//! f64 dropout_rate | u64 seed | u64 adam_t | u64 n_params
//! n_params × f64 params | n_params × f64 m | n_params × f64 v
//! ```

use std::fs;
use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::TrainState;
use crate::encoder::{EncoderConfig, ParamSet};
use crate::error::{FormatError, Result};

pub const STATE_MAGIC: [u8; 4] = *b"OWST";
pub const STATE_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 16 + 8 + 8 + 8 + 8;

pub fn encode_state(state: &TrainState) -> Vec<u8> {
    let c = &state.params.config;
    let n = state.params.num_params();
    let mut out = Vec::with_capacity(HEADER_BYTES + 24 * n);
    out.extend_from_slice(&STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.epoch as u32).to_le_bytes());
    for v in [c.input_dim, c.embed_dim, c.n_attention_layers, c.n_heads] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout_rate.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&state.adam.t.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for block in [&state.params.flatten(), &state.adam.m, &state.adam.v] {
        for &v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a state file; the optimizer hyperparameters come from the
/// caller's configuration.
pub fn decode_state(buf: &[u8], adam: AdamConfig) -> Result<TrainState> {
    if buf.len() < HEADER_BYTES {
        return Err(FormatError::Truncated {
            needed: HEADER_BYTES,
            available: buf.len(),
        }
        .into());
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if magic != STATE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: STATE_MAGIC,
            found: magic,
        }
        .into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != STATE_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: STATE_VERSION,
            found: version,
        }
        .into());
    }
    let epoch = u32_at(8) as usize;
    let config = EncoderConfig {
        input_dim: u32_at(12) as usize,
        embed_dim: u32_at(16) as usize,
        n_attention_layers: u32_at(20) as usize,
        n_heads: u32_at(24) as usize,
        dropout_rate: f64::from_le_bytes(buf[28..36].try_into().unwrap()),
        seed: u64_at(36),
    };
    config
        .validate()
        .map_err(|e| FormatError::Malformed(format!("state config: {e}")))?;
    let t = u64_at(44);
    let mut params = ParamSet::zeros(&config);
    let n = params.num_params();
    let stored = u64_at(52) as usize;
    if stored != n {
        return Err(FormatError::DimensionMismatch {
            expected: n,
            found: stored,
        }
        .into());
    }
    let needed = HEADER_BYTES + 24 * n;
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
    let block = |i: usize| -> Vec<f64> {
        buf[HEADER_BYTES + 8 * n * i..HEADER_BYTES + 8 * n * (i + 1)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let (flat, m, v) = (block(0), block(1), block(2));
    params.load_flat(&flat);
    Ok(TrainState {
        params,
        adam: Adam {
            config: adam,
            m,
            v,
            t,
        },
        epoch,
    })
}

pub fn write_state(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_state(state)).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_state(path: impl AsRef<Path>, adam: AdamConfig) -> Result<TrainState> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_state(&buf, adam)
}
