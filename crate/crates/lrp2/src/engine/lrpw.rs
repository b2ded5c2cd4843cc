//! LRPW: a little-endian binary container for float tensors.
//!
//! Layout: magic bytes `LRPW`, `u32` version, `u32` JSON-header byte
//! length, the UTF-8 JSON header (optional model config, optional vocab,
//! ordered tensor manifest of `{name, shape}`), then the raw 32-bit-float
//! row-major payloads concatenated in manifest order. Round trips are
//! bit-exact: floats are moved via their IEEE-754 bit patterns and the
//! header serializer is deterministic.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ModelConfig;
use crate::error::{Error, Result};

pub const LRPW_MAGIC: &[u8; 4] = b"LRPW";
pub const LRPW_VERSION: u32 = 1;

/// One named tensor: shape plus flat row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpwTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl LrpwTensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// In-memory form of an LRPW file.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpwFile {
    pub config: Option<ModelConfig>,
    pub vocab: Option<Vec<String>>,
    pub tensors: Vec<LrpwTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: Option<ModelConfig>,
    #[serde(default)]
    vocab: Option<Vec<String>>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serialize to bytes.
pub fn lrpw_to_bytes(file: &LrpwFile) -> Result<Vec<u8>> {
    let header = Header {
        config: file.config.clone(),
        vocab: file.vocab.clone(),
        tensors: file
            .tensors
            .iter()
            .map(|t| ManifestEntry { name: t.name.clone(), shape: t.shape.clone() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let payload_len: usize = file.tensors.iter().map(|t| t.data.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload_len);
    out.extend_from_slice(LRPW_MAGIC);
    out.extend_from_slice(&LRPW_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for tensor in &file.tensors {
        if tensor.data.len() != tensor.element_count() {
            return Err(Error::Integrity(format!(
                "tensor {} has {} elements but shape {:?}",
                tensor.name,
                tensor.data.len(),
                tensor.shape
            )));
        }
        for v in &tensor.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse from bytes.
pub fn lrpw_from_bytes(bytes: &[u8]) -> Result<LrpwFile> {
    if bytes.len() < 12 {
        return Err(Error::Format("file too short for LRPW header".into()));
    }
    if &bytes[0..4] != LRPW_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"LRPW\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LRPW_VERSION {
        return Err(Error::Format(format!(
            "unsupported LRPW version {version}, expected {LRPW_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Format(format!("invalid JSON header: {e}")))?;

    let total_elems: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &bytes[header_end..];
    if payload.len() != total_elems * 4 {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes but manifest implies {}",
            payload.len(),
            total_elems * 4
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut offset = 0usize;
    for entry in header.tensors {
        let count: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let bits = u32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
            data.push(f32::from_bits(bits));
            offset += 4;
        }
        tensors.push(LrpwTensor { name: entry.name, shape: entry.shape, data });
    }
    Ok(LrpwFile { config: header.config, vocab: header.vocab, tensors })
}

/// Write an LRPW file to disk.
pub fn save_lrpw(file: &LrpwFile, path: &Path) -> Result<()> {
    let bytes = lrpw_to_bytes(file)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Read an LRPW file from disk.
pub fn load_lrpw(path: &Path) -> Result<LrpwFile> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    lrpw_from_bytes(&bytes)
}
