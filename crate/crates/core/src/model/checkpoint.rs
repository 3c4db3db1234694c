//! Binary container for weights, deltas and masks.
//!
//! ```text
//! bytes 0..4    magic "SMFA"
//! bytes 4..8    version (u32 LE) = 1
//! bytes 8..16   header length H (u64 LE)
//! 16..16+H      UTF-8 JSON header
//! 16+H..        payload: little-endian f64 values
//! ```
//!
//! The header maps each tensor name to
//! `{"dtype":"f64","shape":[..],"offsets":[begin,end]}` (byte offsets
//! relative to the payload start, ascending and non-overlapping) and holds a
//! `"__meta__"` object. Keys are written sorted, so identical contents always
//! serialize to identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{DeltaAdapter, DeltaMeta, Digest, ModelWeights};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"SMFA";
pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "__meta__";
const PREFIX_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Weights,
    Delta,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub method: String,
    pub base_digest_hex: Option<String>,
    pub seed: u64,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offsets: [u64; 2],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Map::new();
        header.insert(META_KEY.to_string(), serde_json::to_value(&self.meta)?);
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            if name == META_KEY {
                return Err(Error::Format(format!("reserved tensor name `{META_KEY}`")));
            }
            let end = offset + 8 * t.len() as u64;
            header.insert(
                name.clone(),
                json!({"dtype": "f64", "shape": t.shape(), "offsets": [offset, end]}),
            );
            offset = end;
        }
        let header = serde_json::to_vec(&Value::Object(header))?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {PREFIX_LEN}-byte prefix",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let available = (bytes.len() - PREFIX_LEN) as u64;
        if header_len > available {
            return Err(Error::Format(format!(
                "header length {header_len} exceeds remaining {available} bytes"
            )));
        }
        let header_end = PREFIX_LEN + header_len as usize;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
            .map_err(|e| Error::Format(format!("header is not a JSON object: {e}")))?;
        let payload = &bytes[header_end..];

        let meta = header
            .get(META_KEY)
            .ok_or_else(|| Error::Format("missing __meta__".into()))?;
        let meta: CheckpointMeta = serde_json::from_value(meta.clone())
            .map_err(|e| Error::Format(format!("bad __meta__: {e}")))?;

        let mut entries = Vec::new();
        for (name, v) in &header {
            if name == META_KEY {
                continue;
            }
            let e: TensorEntry = serde_json::from_value(v.clone())
                .map_err(|err| Error::Format(format!("bad entry `{name}`: {err}")))?;
            if e.dtype != "f64" {
                return Err(Error::Format(format!("`{name}` has dtype {}", e.dtype)));
            }
            let [begin, end] = e.offsets;
            let numel = e
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Format(format!("`{name}` shape overflows")))?;
            if begin > end || end - begin != numel {
                return Err(Error::Format(format!(
                    "`{name}` offsets [{begin},{end}] do not hold shape {:?}",
                    e.shape
                )));
            }
            entries.push((begin, end, name.clone(), e.shape));
        }
        entries.sort();
        let mut cursor = 0u64;
        for (begin, end, name, _) in &entries {
            if *begin < cursor {
                return Err(Error::Format(format!("`{name}` overlaps a previous tensor")));
            }
            if *end > payload.len() as u64 {
                return Err(Error::Format(format!(
                    "`{name}` ends at {end} but payload has {} bytes",
                    payload.len()
                )));
            }
            cursor = *end;
        }
        if cursor != payload.len() as u64 {
            return Err(Error::Format(format!(
                "payload has {} bytes, tensors cover {cursor}",
                payload.len()
            )));
        }

        let mut tensors = BTreeMap::new();
        for (begin, end, name, shape) in entries {
            let data: Vec<f64> = payload[begin as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, Tensor::from_raw(shape, data));
        }
        Ok(Self { meta, tensors })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn expect_kind(ck: &Checkpoint, kind: CheckpointKind) -> Result<()> {
    if ck.meta.kind != kind {
        return Err(Error::Format(format!(
            "expected a {kind:?} checkpoint, found {:?}",
            ck.meta.kind
        )));
    }
    Ok(())
}

pub(crate) fn parse_digest(hex_str: Option<&str>) -> Result<Digest> {
    let s = hex_str.ok_or_else(|| Error::Format("missing base_digest_hex".into()))?;
    let bytes = hex::decode(s).map_err(|e| Error::Format(format!("bad digest hex: {e}")))?;
    bytes
        .try_into()
        .map_err(|_| Error::Format("digest must be 32 bytes".into()))
}

pub fn save_weights(
    weights: &ModelWeights,
    method: &str,
    seed: u64,
    base: Option<&Digest>,
    path: &Path,
) -> Result<()> {
    save_checkpoint(
        &Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Weights,
                method: method.to_string(),
                base_digest_hex: base.map(hex::encode),
                seed,
                k: None,
            },
            tensors: weights.tensors().clone(),
        },
        path,
    )
}

/// Loads weights and their metadata.
pub fn load_weights(path: &Path) -> Result<(ModelWeights, CheckpointMeta)> {
    let ck = load_checkpoint(path)?;
    expect_kind(&ck, CheckpointKind::Weights)?;
    Ok((ModelWeights::from_tensors(ck.tensors), ck.meta))
}

impl From<&DeltaAdapter> for Checkpoint {
    fn from(d: &DeltaAdapter) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Delta,
                method: d.meta.method.clone(),
                base_digest_hex: Some(hex::encode(d.meta.base_digest)),
                seed: d.meta.seed,
                k: d.meta.k,
            },
            tensors: d.tensors.clone(),
        }
    }
}

pub fn save_delta(delta: &DeltaAdapter, path: &Path) -> Result<()> {
    save_checkpoint(&Checkpoint::from(delta), path)
}

pub fn load_delta(path: &Path) -> Result<DeltaAdapter> {
    let ck = load_checkpoint(path)?;
    expect_kind(&ck, CheckpointKind::Delta)?;
    Ok(DeltaAdapter {
        meta: DeltaMeta {
            method: ck.meta.method,
            base_digest: parse_digest(ck.meta.base_digest_hex.as_deref())?,
            seed: ck.meta.seed,
            k: ck.meta.k,
        },
        tensors: ck.tensors,
    })
}

/// Loads a delta and verifies it was extracted against `base`.
pub fn load_delta_for(path: &Path, base: &ModelWeights) -> Result<DeltaAdapter> {
    let d = load_delta(path)?;
    let found = base.digest();
    if d.meta.base_digest != found {
        return Err(Error::DigestMismatch {
            expected: hex::encode(d.meta.base_digest),
            found: hex::encode(found),
        });
    }
    Ok(d)
}

/// Mask tensors (0/1 as f64) with `kind = "mask"`.
pub fn save_mask(
    masks: &BTreeMap<String, Tensor>,
    method: &str,
    base: &Digest,
    seed: u64,
    k: Option<f64>,
    path: &Path,
) -> Result<()> {
    save_checkpoint(
        &Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Mask,
                method: method.to_string(),
                base_digest_hex: Some(hex::encode(base)),
                seed,
                k,
            },
            tensors: masks.clone(),
        },
        path,
    )
}

pub fn load_mask(path: &Path) -> Result<(BTreeMap<String, Tensor>, CheckpointMeta)> {
    let ck = load_checkpoint(path)?;
    expect_kind(&ck, CheckpointKind::Mask)?;
    Ok((ck.tensors, ck.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::model::tests::tiny_config;

    fn sample() -> Checkpoint {
        let w = init_model(&tiny_config(), 5).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Weights,
                method: "init".into(),
                base_digest_hex: None,
                seed: 5,
                k: None,
            },
            tensors: w.into_tensors(),
        }
    }

    #[test]
    fn prefix_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"SMFA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[16..16 + h]).unwrap();
        assert_eq!(header["__meta__"]["kind"], "weights");
        assert_eq!(header["head.0.bias"]["dtype"], "f64");
        assert_eq!(header["head.0.bias"]["offsets"][0], 0);
    }

    #[test]
    fn byte_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_and_corrupt_inputs() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 15, 16, 40, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut big = bytes.clone();
        big[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&big), Err(Error::Format(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Format(_))));
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let header = json!({
            "__meta__": {"kind": "delta", "method": "m", "base_digest_hex": null, "seed": 0, "k": null},
            "a": {"dtype": "f64", "shape": [2], "offsets": [0, 16]},
            "b": {"dtype": "f64", "shape": [1], "offsets": [8, 16]},
        });
        let h = serde_json::to_vec(&header).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(h.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&h);
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
