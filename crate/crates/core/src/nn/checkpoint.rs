//! Checkpoints: a JSON manifest next to a raw little-endian `f64` data file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::NetParams;

pub const FORMAT: &str = "rsmec-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("data file does not match manifest: {0}")]
    Corrupt(String),
    #[error("tensor `{0}` missing or with a different shape")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    data_file: String,
    sha256: String,
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Data file stored next to a manifest: `x.json` → `x.bin`.
pub fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(TensorEntry { name: name.into(), shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds every array of `params` under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, params: &NetParams) {
        for a in params.arrays() {
            self.push(format!("{prefix}/{}", a.name), a.shape.clone(), a.data.clone());
        }
    }

    /// Copies `prefix/` tensors back into `params`.
    pub fn restore_params(&self, prefix: &str, params: &mut NetParams) -> Result<(), CheckpointError> {
        for i in 0..params.len() {
            let a = &params.arrays()[i];
            let key = format!("{prefix}/{}", a.name);
            let t = self.get(&key).filter(|t| t.shape == a.shape).ok_or(CheckpointError::Missing(key))?;
            params.data_mut(i).copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn save(&self, manifest_path: &Path) -> Result<(), CheckpointError> {
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(ManifestEntry { name: t.name.clone(), shape: t.shape.clone(), offset: bytes.len(), len: t.data.len() });
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let data = data_path(manifest_path);
        let manifest = Manifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            dtype: "f64-le".into(),
            data_file: data.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: hex(&Sha256::digest(&bytes)),
            meta: self.meta.clone(),
            tensors: entries,
        };
        if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&data, &bytes).map_err(io_err(&data))?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(manifest_path, text).map_err(io_err(manifest_path))
    }

    pub fn load(manifest_path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
        let bad = |msg: String| CheckpointError::Manifest { path: manifest_path.to_path_buf(), msg };
        let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.format != FORMAT || m.version != FORMAT_VERSION || m.dtype != "f64-le" {
            return Err(bad(format!("unsupported {} v{} {}", m.format, m.version, m.dtype)));
        }
        let data = manifest_path.with_file_name(&m.data_file);
        let bytes = fs::read(&data).map_err(io_err(&data))?;
        if hex(&Sha256::digest(&bytes)) != m.sha256 {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            let end = e.offset + 8 * e.len;
            if end > bytes.len() || e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Corrupt(format!("tensor `{}` out of range", e.name)));
            }
            let values = bytes[e.offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(TensorEntry { name: e.name, shape: e.shape, data: values });
        }
        Ok(Self { meta: m.meta, tensors })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
