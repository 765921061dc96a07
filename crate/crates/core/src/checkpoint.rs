//! Binary checkpoint container shared by embeddings, feature models, and
//! classifiers.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DBRA" | version u16 | header_len u32 | header JSON
//! | tensor_count u32
//! | per tensor: name_len u16, name utf8, dtype u8 (0 = f32),
//!               ndim u8, dims u32 each, payload_offset u64
//! | payload (row-major f32)
//! | crc32 u32 of the payload region
//! ```
//!
//! Offsets are relative to the payload start. A wrong magic or version is a
//! [`CheckpointError::VersionMismatch`]; a truncated file or corrupted
//! payload is a [`CheckpointError::ChecksumMismatch`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"DBRA";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint format: {0}")]
    VersionMismatch(String),
    #[error("checkpoint payload corrupted or truncated: {0}")]
    ChecksumMismatch(String),
}

/// JSON header carried by every container. `kind` tags what the tensors
/// are (embedding, feature model, classifier flavor); the remaining fields
/// are populated where they apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hidden_units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub num_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Class names in index order, for classifier checkpoints.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classes: Option<Vec<String>>,
    /// Free-form extras (kept sorted for byte-stable serialization).
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub tensors: Vec<TensorRecord>,
}

impl Container {
    pub fn new(header: ContainerHeader) -> Self {
        Container {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "tensor payload does not match shape");
        self.tensors.push(TensorRecord {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header_json =
            serde_json::to_vec(&self.header).expect("header serialization cannot fail");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(DTYPE_F32);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (t.data.len() * 4) as u64;
        }
        let payload_start = out.len();
        for t in &self.tensors {
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container, CheckpointError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take_format(4)?;
        if magic != MAGIC {
            return Err(CheckpointError::VersionMismatch(format!(
                "bad magic {magic:?}"
            )));
        }
        let version = u16::from_le_bytes(cursor.take_format(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch(format!(
                "version {version}, expected {VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(cursor.take_format(4)?.try_into().unwrap()) as usize;
        let header_json = cursor.take_format(header_len)?;
        let header: ContainerHeader = serde_json::from_slice(header_json)
            .map_err(|e| CheckpointError::VersionMismatch(format!("bad header: {e}")))?;
        let count = u32::from_le_bytes(cursor.take_format(4)?.try_into().unwrap()) as usize;
        let mut directory = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len =
                u16::from_le_bytes(cursor.take_format(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cursor.take_format(name_len)?.to_vec())
                .map_err(|_| CheckpointError::VersionMismatch("non-utf8 tensor name".into()))?;
            let dtype = cursor.take_format(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::VersionMismatch(format!(
                    "unsupported dtype {dtype}"
                )));
            }
            let ndim = cursor.take_format(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape
                    .push(u32::from_le_bytes(cursor.take_format(4)?.try_into().unwrap()) as usize);
            }
            let offset = u64::from_le_bytes(cursor.take_format(8)?.try_into().unwrap()) as usize;
            directory.push((name, shape, offset));
        }
        // Everything after the directory except the trailing CRC is payload.
        let payload_start = cursor.pos;
        if bytes.len() < payload_start + 4 {
            return Err(CheckpointError::ChecksumMismatch(
                "file ends inside payload region".into(),
            ));
        }
        let payload = &bytes[payload_start..bytes.len() - 4];
        let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let actual_crc = crc32(payload);
        if stored_crc != actual_crc {
            return Err(CheckpointError::ChecksumMismatch(format!(
                "crc32 {actual_crc:08x} != stored {stored_crc:08x}"
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset) in directory {
            let numel: usize = shape.iter().product();
            let end = offset + numel * 4;
            if end > payload.len() {
                return Err(CheckpointError::ChecksumMismatch(format!(
                    "tensor `{name}` extends past payload"
                )));
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(TensorRecord { name, shape, data });
        }
        Ok(Container {
            header,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container, CheckpointError> {
        let bytes = fs::read(path)?;
        Container::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Reads from the fixed-layout region before the payload. Truncation
    /// here means the file cannot be validated, which surfaces as a
    /// checksum failure.
    fn take_format(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::ChecksumMismatch(
                "file truncated before payload".into(),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), the variant used
/// by zip/png.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, entry) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        table
    });
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}
