//! `EDGF` weight container.
//!
//! Layout: `b"EDGF"`, `u32` LE version (1), `u64` LE header length, a UTF-8
//! JSON manifest padded with spaces so the payload starts on a 64-byte
//! boundary, then the payload. Each tensor is raw little-endian `f32` at a
//! 64-byte aligned payload offset, zero padded in between, in canonical
//! parameter order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{EdgeFaceModel, Variant};
use crate::error::{ContainerError, Error, Result};

pub const MAGIC: &[u8; 4] = b"EDGF";
pub const VERSION: u32 = 1;
pub const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub variant: Variant,
    pub gamma: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub byte_len: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelInfo,
    pub tensors: Vec<TensorEntry>,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

/// Serializes a model built from one of the named variants.
pub fn save(model: &EdgeFaceModel) -> Result<Vec<u8>> {
    let variant = model.spec.variant;
    if model.spec != variant.spec() {
        return Err(Error::InvalidArgument(
            "only the stock variant layouts can be stored in a container".into(),
        ));
    }
    let params = model.params();
    let mut tensors = Vec::with_capacity(params.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, p) in &params {
        let offset = align_up(payload.len());
        payload.resize(offset, 0);
        for v in p.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let bytes = &payload[offset..];
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.shape(),
            dtype: "f32".into(),
            offset: offset as u64,
            byte_len: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
        });
    }
    let manifest = Manifest {
        model: ModelInfo {
            variant,
            gamma: model.gamma,
            seed: model.seed,
        },
        tensors,
    };
    let mut header = serde_json::to_vec(&manifest).expect("manifest serializes");
    header.resize(align_up(PREAMBLE + header.len()) - PREAMBLE, b' ');
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes the preamble and manifest without touching the payload.
pub fn read_manifest(bytes: &[u8]) -> std::result::Result<(Manifest, usize), ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::Truncated("missing magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(ContainerError::Truncated("incomplete preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let payload_start = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE))
        .ok_or_else(|| ContainerError::Truncated(format!("header length {header_len}")))?;
    if bytes.len() < payload_start {
        return Err(ContainerError::Truncated(format!(
            "header needs {header_len} bytes, {} available",
            bytes.len() - PREAMBLE
        )));
    }
    if payload_start % ALIGN != 0 {
        return Err(ContainerError::Manifest("payload is not 64-byte aligned".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| ContainerError::Manifest(e.to_string()))?;
    Ok((manifest, payload_start))
}

fn check_entries(manifest: &Manifest, payload_len: usize) -> std::result::Result<(), ContainerError> {
    let mut end = 0u64;
    for (i, t) in manifest.tensors.iter().enumerate() {
        if t.dtype != "f32" {
            return Err(ContainerError::Manifest(format!("`{}` has dtype {}", t.name, t.dtype)));
        }
        let count: u64 = t.shape.iter().map(|&d| d as u64).product();
        if t.byte_len != 4 * count {
            return Err(ContainerError::Manifest(format!(
                "`{}` byte_len {} disagrees with shape {:?}",
                t.name, t.byte_len, t.shape
            )));
        }
        if t.offset % ALIGN as u64 != 0 {
            return Err(ContainerError::Manifest(format!("`{}` offset {} is unaligned", t.name, t.offset)));
        }
        if i > 0 && t.offset < end {
            return Err(ContainerError::Manifest(format!("`{}` overlaps its predecessor", t.name)));
        }
        end = t
            .offset
            .checked_add(t.byte_len)
            .ok_or_else(|| ContainerError::Manifest(format!("`{}` extent overflows", t.name)))?;
        if end > payload_len as u64 {
            return Err(ContainerError::Truncated(format!(
                "`{}` ends at {end}, payload has {payload_len} bytes",
                t.name
            )));
        }
    }
    if end != payload_len as u64 {
        return Err(ContainerError::Manifest(format!(
            "{} trailing payload bytes",
            payload_len as u64 - end
        )));
    }
    Ok(())
}

/// Validates the whole container and only then returns the model.
pub fn load(bytes: &[u8]) -> Result<EdgeFaceModel> {
    let (manifest, start) = read_manifest(bytes)?;
    let payload = &bytes[start..];
    check_entries(&manifest, payload.len())?;
    let mut model = EdgeFaceModel::skeleton(&manifest.model.variant.spec(), manifest.model.gamma)
        .map_err(|e| ContainerError::Manifest(e.to_string()))?;
    model.seed = manifest.model.seed;

    let mut by_name: HashMap<&str, &TensorEntry> = HashMap::new();
    for t in &manifest.tensors {
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(ContainerError::LayoutMismatch(format!("`{}` listed twice", t.name)).into());
        }
    }
    let mut params = model.params_mut();
    if params.len() != by_name.len() {
        return Err(ContainerError::LayoutMismatch(format!(
            "model has {} tensors, manifest lists {}",
            params.len(),
            by_name.len()
        ))
        .into());
    }
    for (name, p) in params.iter_mut() {
        let t = by_name
            .get(name.as_str())
            .ok_or_else(|| ContainerError::LayoutMismatch(format!("`{name}` missing")))?;
        if t.shape != p.shape() {
            return Err(ContainerError::LayoutMismatch(format!(
                "`{name}` has shape {:?}, model expects {:?}",
                t.shape,
                p.shape()
            ))
            .into());
        }
        let raw = &payload[t.offset as usize..(t.offset + t.byte_len) as usize];
        if crc32fast::hash(raw) != t.crc32 {
            return Err(ContainerError::Checksum(name.clone()).into());
        }
        for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    drop(params);
    Ok(model)
}

pub fn save_file(model: &EdgeFaceModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save(model)?)?;
    Ok(())
}

pub fn load_file(path: impl AsRef<Path>) -> Result<EdgeFaceModel> {
    load(&std::fs::read(path)?)
}
