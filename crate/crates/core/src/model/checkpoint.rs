//! Checkpoint files: a JSON manifest followed by raw little-endian `f32` data.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes   "STDICKPT"
//! version    u32 LE    1
//! manifest   u64 LE    byte length N
//! manifest   N bytes   UTF-8 JSON (CheckpointManifest)
//! data       ...       tensors in manifest order, f32 LE, row-major
//! ```
//!
//! Offsets in the manifest are relative to the start of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Dims, ModelKind, StdiModel};
use crate::data::MinMax;
use crate::error::{Error, Result};
use crate::nn::Role;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STDICKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub role: Role,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: ModelKind,
    pub dims: Dims,
    #[serde(default)]
    pub scaling: Option<MinMax>,
    pub tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint<T: Scalar>(model: &StdiModel<T>, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for e in model.store.entries() {
        let bytes = (e.value.len() * 4) as u64;
        tensors.push(TensorRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            dtype: "f32".into(),
            role: e.role,
            offset,
            bytes,
        });
        offset += bytes;
    }
    let manifest = CheckpointManifest {
        kind: model.kind,
        dims: model.dims.clone(),
        scaling: model.scaling,
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::with_capacity(20 + json.len() + offset as usize);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for e in model.store.entries() {
        for v in e.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_manifest(bytes: &[u8], path: &Path) -> Result<(CheckpointManifest, usize)> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "manifest runs past end of file"))?;
    let manifest = serde_json::from_slice(&bytes[20..end])?;
    Ok((manifest, end))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<StdiModel<T>> {
    let bytes = fs::read(path)?;
    let (manifest, data_start) = read_manifest(&bytes, path)?;
    let mut model = build_model::<T>(manifest.kind, &manifest.dims, 0)?;
    if model.store.len() != manifest.tensors.len() {
        return Err(Error::format(
            path,
            format!(
                "{} tensors recorded, {} expected for {}",
                manifest.tensors.len(),
                model.store.len(),
                manifest.kind
            ),
        ));
    }
    let data = &bytes[data_start..];
    let ids: Vec<_> = model.store.ids().collect();
    for (id, rec) in ids.into_iter().zip(&manifest.tensors) {
        let entry = model.store.entry(id);
        if entry.name != rec.name || entry.value.shape() != rec.shape.as_slice() || rec.dtype != "f32" {
            return Err(Error::format(
                path,
                format!("tensor {} {:?} does not match expected {} {:?}", rec.name, rec.shape, entry.name, entry.value.shape()),
            ));
        }
        let (start, end) = (rec.offset as usize, (rec.offset + rec.bytes) as usize);
        if end > data.len() || rec.bytes as usize != entry.value.len() * 4 {
            return Err(Error::format(path, format!("tensor {} out of bounds", rec.name)));
        }
        let values: Vec<T> = data[start..end]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        *model.store.get_mut(id) = Tensor::new(&rec.shape, values)?;
        model.store.set_role(id, rec.role);
    }
    model.scaling = manifest.scaling;
    Ok(model)
}
