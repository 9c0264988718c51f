//! The NOPK single-file container: named real/complex arrays plus a JSON
//! metadata blob, checksummed and written atomically.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `NOPK` |
//! | 4 | version (u32) |
//! | 8 | header length `h` (u64) |
//! | h | UTF-8 JSON `{"entries":[{"name","dtype","shape","byte_offset"}],"meta":{..}}` |
//! | .. | payload: f64 values, complex as `(re, im)` pairs |
//! | 8 | CRC-64/XZ of the payload (u64) |
//!
//! `byte_offset` counts from the start of the payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::error::{ContainerError, Error, Result};
use crate::tensor::{DType, Tensor, C64};

pub const MAGIC: [u8; 4] = *b"NOPK";
pub const VERSION: u32 = 1;

const CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    entries: Vec<EntryHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Ordered named arrays plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    entries: Vec<(String, Tensor)>,
    meta: serde_json::Map<String, serde_json::Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate container entry `{name}`")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`Container::get`] but failing with a missing-entry error.
    pub fn require(&self, name: &str) -> std::result::Result<&Tensor, ContainerError> {
        self.get(name)
            .ok_or_else(|| ContainerError::MissingEntry(name.to_string()))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meta(&self) -> &serde_json::Map<String, serde_json::Value> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: serde_json::Value) {
        self.meta.insert(key.into(), value);
    }

    pub fn meta_value(&self, key: &str) -> std::result::Result<&serde_json::Value, ContainerError> {
        self.meta
            .get(key)
            .ok_or_else(|| ContainerError::Header(format!("metadata key `{key}` missing")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            entries.push(EntryHeader {
                name: name.clone(),
                dtype: match t.dtype() {
                    DType::Real => "f64",
                    DType::Complex => "c128",
                }
                .to_string(),
                shape: t.shape().to_vec(),
                byte_offset: payload.len() as u64,
            });
            match t.dtype() {
                DType::Real => {
                    for v in t.real_data().expect("real") {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                DType::Complex => {
                    for z in t.complex_data().expect("complex") {
                        payload.extend_from_slice(&z.re.to_le_bytes());
                        payload.extend_from_slice(&z.im.to_le_bytes());
                    }
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            entries,
            meta: serde_json::Value::Object(self.meta.clone()),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&CRC.checksum(&payload).to_le_bytes());
        out
    }

    /// Validates magic, version and checksum before decoding any array.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ContainerError> {
        if bytes.len() < 4 {
            return Err(ContainerError::Truncated);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        if bytes.len() < 24 {
            return Err(ContainerError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body_start = 16usize
            .checked_add(usize::try_from(hlen).map_err(|_| ContainerError::Truncated)?)
            .ok_or(ContainerError::Truncated)?;
        if bytes.len() < body_start + 8 {
            return Err(ContainerError::Truncated);
        }
        let payload = &bytes[body_start..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let computed = CRC.checksum(payload);
        if stored != computed {
            return Err(ContainerError::Checksum { stored, computed });
        }
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| ContainerError::Header(e.to_string()))?;
        let meta = match header.meta {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => Default::default(),
            _ => return Err(ContainerError::Header("meta must be an object".into())),
        };
        let mut out = Container {
            entries: Vec::with_capacity(header.entries.len()),
            meta,
        };
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for e in header.entries {
            let numel: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "c128" => 16,
                other => return Err(ContainerError::Header(format!("unknown dtype `{other}`"))),
            };
            let start = usize::try_from(e.byte_offset).map_err(|_| ContainerError::Truncated)?;
            let end = numel
                .checked_mul(width)
                .and_then(|b| b.checked_add(start))
                .ok_or(ContainerError::Truncated)?;
            if end > payload.len() {
                return Err(ContainerError::Header(format!("entry `{}` runs past the payload", e.name)));
            }
            if spans.iter().any(|&(s, t)| start < t && s < end) {
                return Err(ContainerError::Header(format!("entry `{}` overlaps another", e.name)));
            }
            spans.push((start, end));
            if out.get(&e.name).is_some() {
                return Err(ContainerError::DuplicateEntry(e.name));
            }
            let raw = &payload[start..end];
            let f = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
            let t = if width == 8 {
                Tensor::real(&e.shape, raw.chunks_exact(8).map(f).collect())
            } else {
                Tensor::complex(
                    &e.shape,
                    raw.chunks_exact(16).map(|c| C64::new(f(&c[..8]), f(&c[8..]))).collect(),
                )
            }
            .map_err(|err| ContainerError::Header(err.to_string()))?;
            out.entries.push((e.name, t));
        }
        Ok(out)
    }
}

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn container_write(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    write_atomic(path.as_ref(), &container.to_bytes())
}

pub fn container_read(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes).map_err(|source| Error::Container {
        path: path.to_path_buf(),
        source,
    })
}
