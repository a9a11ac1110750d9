//! Binary parameter container.
//!
//! Layout: magic `DRAFTCKP`, format version (u32 LE), header length (u64 LE),
//! UTF-8 JSON header, then every tensor's values as f64 LE in header order.
//! The header carries caller metadata plus name, group and shape per entry.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::params::{Group, ParamStore};
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"DRAFTCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    group: Group,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: Value,
    entries: Vec<EntryHeader>,
}

pub fn to_bytes(store: &ParamStore, meta: &Value) -> Vec<u8> {
    let header = Header {
        meta: meta.clone(),
        entries: store
            .entries()
            .iter()
            .map(|p| EntryHeader {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let n_values: usize = store.entries().iter().map(|p| p.value.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in store.entries() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Input(format!("corrupt checkpoint: {}", msg.into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, Value)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
    let mut data = &body[hlen..];
    let mut store = ParamStore::new();
    for e in header.entries {
        let n: usize = e.shape.iter().product();
        if data.len() < 8 * n {
            return Err(corrupt(format!("truncated data for {}", e.name)));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        store.insert(e.name, e.group, Tensor::new(e.shape, values)?)?;
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok((store, header.meta))
}

/// Writes atomically: a sibling temp file renamed over `path`.
pub fn save(path: &Path, store: &ParamStore, meta: &Value) -> Result<()> {
    write_atomic(path, &to_bytes(store, meta))
}

pub fn load(path: &Path) -> Result<(ParamStore, Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
