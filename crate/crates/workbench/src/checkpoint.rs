//! Single-file model checkpoints.
//!
//! Layout: the magic bytes, a little-endian `u64` header length, a JSON
//! header, then every weight and bias array as little-endian `f32`. The
//! header holds the model's serialized structure with each numeric array
//! replaced by its `[offset, len]` span in the body, so any serializable
//! model round-trips bit-exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ACAICKPT";
pub const FORMAT_VERSION: u32 = 1;
const TENSOR_KEYS: [&str; 2] = ["weight", "bias"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    /// Model type, e.g. `classifier`.
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub metadata: Value,
    pub model: Value,
}

fn extract(value: &mut Value, body: &mut Vec<f32>) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if TENSOR_KEYS.contains(&k.as_str()) {
                    if let Value::Array(items) = v {
                        let offset = body.len();
                        for item in items.iter() {
                            let x = item.as_f64().ok_or_else(|| Error::runtime(format!("non-numeric `{k}` entry")))?;
                            body.push(x as f32);
                        }
                        *v = json!({ "offset": offset, "len": items.len() });
                        continue;
                    }
                }
                extract(v, body)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                extract(v, body)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn restore(value: &mut Value, body: &[f32]) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if TENSOR_KEYS.contains(&k.as_str()) {
                    if let Some(span) = v.as_object() {
                        let (offset, len) = span_of(span)?;
                        let slice = body.get(offset..offset + len).ok_or_else(|| Error::input("checkpoint body too short"))?;
                        *v = Value::Array(slice.iter().map(|&x| json!(x)).collect());
                        continue;
                    }
                }
                restore(v, body)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                restore(v, body)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn span_of(span: &Map<String, Value>) -> Result<(usize, usize)> {
    let get = |k: &str| span.get(k).and_then(Value::as_u64).map(|v| v as usize);
    match (get("offset"), get("len")) {
        (Some(o), Some(l)) => Ok((o, l)),
        _ => Err(Error::input("malformed tensor span in checkpoint header")),
    }
}

pub fn save<T: Serialize>(path: &Path, kind: &str, config_hash: &str, seed: u64, metadata: Value, model: &T) -> Result<()> {
    let mut tree = serde_json::to_value(model).map_err(|e| Error::write(path, e))?;
    let mut body = Vec::new();
    extract(&mut tree, &mut body)?;
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
        seed,
        metadata,
        model: tree,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::write(path, e))?;
    let mut bytes = Vec::with_capacity(16 + header.len() + 4 * body.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in body {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::write_atomic(path, &bytes)
}

pub fn read_header(path: &Path) -> Result<(Header, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::read(path, "not a checkpoint file"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_bytes = bytes.get(16..16 + n).ok_or_else(|| Error::read(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::read(path, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::read(path, format!("unsupported checkpoint format {}", header.format_version)));
    }
    let rest = &bytes[16 + n..];
    if rest.len() % 4 != 0 {
        return Err(Error::read(path, "body is not a whole number of f32 values"));
    }
    let body = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((header, body))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Header, T)> {
    let (mut header, body) = read_header(path)?;
    if header.kind != kind {
        return Err(Error::read(path, format!("checkpoint holds a `{}`, expected `{kind}`", header.kind)));
    }
    let mut tree = std::mem::take(&mut header.model);
    restore(&mut tree, &body)?;
    let model = serde_json::from_value(tree).map_err(|e| Error::read(path, e))?;
    Ok((header, model))
}
