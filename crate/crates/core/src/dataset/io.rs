//! Feature file layout (little-endian):
//!
//! ```text
//! "OWSF" | u32 version=1 | u32 n_records | u32 F
//! per record: u32 object_id | u32 category_id | u32 state_id | u8 split | F × f32
//! ```
//!
//! The companion manifest is a JSON document mapping object ids to
//! category ids, with optional display names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord, Split};
use crate::error::{FormatError, Result};

pub const FEATURE_FILE_MAGIC: [u8; 4] = *b"OWSF";
pub const FEATURE_FILE_VERSION: u32 = 1;
pub const FEATURE_HEADER_BYTES: usize = 16;
const RECORD_LABEL_BYTES: usize = 13;

pub fn encode_features(dataset: &Dataset) -> Vec<u8> {
    let f = dataset.feature_dim();
    let mut out =
        Vec::with_capacity(FEATURE_HEADER_BYTES + dataset.len() * (RECORD_LABEL_BYTES + 4 * f));
    out.extend_from_slice(&FEATURE_FILE_MAGIC);
    out.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for r in dataset.records() {
        out.extend_from_slice(&r.object_id.to_le_bytes());
        out.extend_from_slice(&r.category_id.to_le_bytes());
        out.extend_from_slice(&r.state_id.to_le_bytes());
        out.push(r.split.as_u8());
        for v in &r.feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_features(buf: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != FEATURE_FILE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FEATURE_FILE_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = cur.u32()?;
    if version != FEATURE_FILE_VERSION {
        return Err(FormatError::UnsupportedVersion {
            expected: FEATURE_FILE_VERSION,
            found: version,
        }
        .into());
    }
    let n = cur.u32()? as usize;
    let f = cur.u32()? as usize;
    if f == 0 {
        return Err(FormatError::DimensionMismatch {
            expected: 1,
            found: 0,
        }
        .into());
    }
    let needed = FEATURE_HEADER_BYTES + n * (RECORD_LABEL_BYTES + 4 * f);
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
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let object_id = cur.u32()?;
        let category_id = cur.u32()?;
        let state_id = cur.u32()?;
        let split_byte = cur.take(1)?[0];
        let split = Split::from_u8(split_byte)
            .ok_or_else(|| FormatError::Malformed(format!("split byte {split_byte}")))?;
        let feature = cur
            .take(4 * f)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(FeatureRecord {
            object_id,
            category_id,
            state_id,
            split,
            feature,
        });
    }
    Dataset::new(records, f)
}

pub fn write_features(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(dataset)).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_features(&buf)
}

/// Reads a feature file and checks its dimension against `expected_dim`.
pub fn read_features_expecting(path: impl AsRef<Path>, expected_dim: usize) -> Result<Dataset> {
    let ds = read_features(path)?;
    if ds.feature_dim() != expected_dim {
        return Err(FormatError::DimensionMismatch {
            expected: expected_dim,
            found: ds.feature_dim(),
        }
        .into());
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanionManifest {
    /// object_id → category_id
    pub object_categories: BTreeMap<u32, u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub names: BTreeMap<u32, String>,
}

impl CompanionManifest {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        CompanionManifest {
            object_categories: dataset.manifest().clone(),
            names: BTreeMap::new(),
        }
    }
}

pub fn write_companion_manifest(
    path: impl AsRef<Path>,
    manifest: &CompanionManifest,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}

pub fn read_companion_manifest(path: impl AsRef<Path>) -> Result<CompanionManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| FormatError::Malformed(e.to_string()))?)
}
