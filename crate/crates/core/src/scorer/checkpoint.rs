//! Single-file checkpoint container.
//!
//! ```text
//! b"SQCK" | header_len: u32 LE | header: JSON (header_len bytes) | f32 LE arrays
//! ```
//!
//! The header lists each array by name and length in file order; for the
//! linear head these are `head.weight` (d values) then `head.bias` (1 value).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::{BackboneRegistry, BackboneSpec};
use super::{LinearHead, ScorerError, ScorerModel, MODEL_VERSION};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SQCK";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    config_fingerprint: String,
    backbone: BackboneSpec,
    d: usize,
    arrays: Vec<ArrayEntry>,
}

pub fn save_checkpoint(model: &ScorerModel, path: impl AsRef<Path>) -> Result<(), ScorerError> {
    let path = path.as_ref();
    let d = model.head.dim();
    let header = Header {
        version: model.version.clone(),
        config_fingerprint: model.config_fingerprint.clone(),
        backbone: model.backbone().spec(),
        d,
        arrays: vec![
            ArrayEntry {
                name: "head.weight".into(),
                len: d,
            },
            ArrayEntry {
                name: "head.bias".into(),
                len: 1,
            },
        ],
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(8 + header.len() + 4 * (d + 1));
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for w in model.head.weights.iter().chain(std::iter::once(&model.head.bias)) {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    // written beside the target, then renamed over it
    let tmp = path.with_extension("tmp");
    let io = |source| ScorerError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::write(&tmp, &bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Loads with the default backbone registry and no fingerprint check.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScorerModel, ScorerError> {
    load_checkpoint_with(path, &BackboneRegistry::default(), None)
}

pub fn load_checkpoint_with(
    path: impl AsRef<Path>,
    registry: &BackboneRegistry,
    expected_fingerprint: Option<&str>,
) -> Result<ScorerModel, ScorerError> {
    let path = path.as_ref();
    let corrupt = |reason: &str| ScorerError::Corrupt {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path).map_err(|source| ScorerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header extends past end of file"))?;
    let header: Header =
        serde_json::from_slice(&bytes[8..body_start]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    if header.version != MODEL_VERSION {
        return Err(ScorerError::VersionMismatch {
            expected: MODEL_VERSION.into(),
            found: header.version,
        });
    }
    if let Some(expected) = expected_fingerprint {
        if header.config_fingerprint != expected {
            return Err(ScorerError::FingerprintMismatch {
                expected: expected.into(),
                found: header.config_fingerprint,
            });
        }
    }
    let layout_ok = header.arrays.len() == 2
        && header.arrays[0].name == "head.weight"
        && header.arrays[0].len == header.d
        && header.arrays[1].name == "head.bias"
        && header.arrays[1].len == 1;
    if !layout_ok {
        return Err(corrupt("unexpected array layout"));
    }
    let body = &bytes[body_start..];
    if body.len() != 4 * (header.d + 1) {
        return Err(corrupt(&format!(
            "expected {} weight bytes, found {}",
            4 * (header.d + 1),
            body.len()
        )));
    }
    let mut values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let bias = values.pop().expect("bias present");
    let backbone = registry.build(&header.backbone)?;
    if backbone.dim() != header.d {
        return Err(ScorerError::DimensionMismatch {
            expected: header.d,
            got: backbone.dim(),
        });
    }
    let mut model = ScorerModel::with_head(backbone, LinearHead { weights: values, bias }, header.config_fingerprint);
    model.version = header.version;
    Ok(model)
}
