//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "FLWCKPT\0"
//! version   u32
//! hdr_len   u64
//! header    hdr_len bytes of JSON: config, normalization, parameter manifest
//! payload   f64 values in manifest order
//! checksum  32 bytes, SHA-256 of everything above
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::dataflow::NormalizationParams;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"FLWCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;
const CHECKSUM: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    normalization: Option<NormalizationParams>,
    params: Vec<ManifestEntry>,
    payload_values: usize,
}

/// Serializes `model` to bytes.
pub fn write_checkpoint<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut offset = 0;
    let params = model
        .params()
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.numel();
            e
        })
        .collect();
    let header = Header {
        config: model.config().clone(),
        normalization: model.normalization,
        params,
        payload_values: offset,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset * 8 + CHECKSUM);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in model.params().iter() {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses a checkpoint. Nothing is built unless every check passes.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < PREAMBLE + CHECKSUM {
        return Err(bad("file truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM);
    if Sha256::digest(body).as_slice() != stored {
        return Err(bad("checksum mismatch"));
    }
    let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let hdr_end = usize::try_from(hdr_len)
        .ok()
        .and_then(|n| PREAMBLE.checked_add(n))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[PREAMBLE..hdr_end])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let payload = &body[hdr_end..];
    if payload.len() != header.payload_values * 8 {
        return Err(bad("payload length disagrees with header"));
    }
    let mut model = Model::<T>::new(header.config)?;
    model.normalization = header.normalization;
    if header.params.len() != model.params().len() {
        return Err(bad("parameter count disagrees with architecture"));
    }
    let mut loaded = Vec::with_capacity(header.params.len());
    for (entry, (name, t)) in header.params.iter().zip(model.params().iter()) {
        if entry.name != name || entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` {:?} does not match `{name}` {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let n = t.numel();
        let raw = payload
            .get(entry.offset * 8..(entry.offset + n) * 8)
            .ok_or_else(|| bad("parameter offset out of range"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        loaded.push(Tensor::new(t.shape(), data)?.with_requires_grad(true));
    }
    for (dst, src) in model.params_mut().tensors_mut().iter_mut().zip(loaded) {
        *dst = src;
    }
    Ok(model)
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_checkpoint(model))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
