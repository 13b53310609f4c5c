//! Named-tensor weight archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic       4 bytes  "FSWA"
//! version     u16      1
//! reserved    u16      0
//! index_len   u64      byte length of the JSON index
//! index       JSON     {"tensors": [{"name", "kind", "dtype", "axes", "shape", "offset", "len"}]}
//! payload     raw tensor data, each tensor at `offset` bytes from payload start
//! ```
//!
//! Kernel axis orders: 2D kernels `oihw` (out, in, height, width), 3D kernels
//! `oidhw` (out, in, depth, height, width). Other parameters use `flat`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSWA";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    /// Convolution kernel, shape (c_out, c_in, h, w).
    Kernel2d,
    /// Convolution kernel, shape (c_out, c_in, d, h, w).
    Kernel3d,
    /// Bias, normalization statistic or any other non-kernel parameter.
    Param,
}

impl TensorKind {
    pub fn axes(self) -> &'static str {
        match self {
            TensorKind::Kernel2d => "oihw",
            TensorKind::Kernel3d => "oidhw",
            TensorKind::Param => "flat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// One named tensor. Values are held in f64; `dtype` records the storage
/// precision so f32 archives round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(
        name: impl Into<String>,
        kind: TensorKind,
        dtype: DType,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let expected_rank = match kind {
            TensorKind::Kernel2d => Some(4),
            TensorKind::Kernel3d => Some(5),
            TensorKind::Param => None,
        };
        if let Some(r) = expected_rank {
            if shape.len() != r {
                return Err(Error::Dimension(format!(
                    "{name}: {kind:?} needs rank {r}, got shape {shape:?}"
                )));
            }
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Dimension(format!("{name}: empty axis in {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension(format!(
                "{name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("{name}: non-finite weight")));
        }
        Ok(Self {
            name,
            kind,
            dtype,
            shape,
            data,
        })
    }

    pub fn from_f32(
        name: impl Into<String>,
        kind: TensorKind,
        shape: Vec<usize>,
        data: &[f32],
    ) -> Result<Self> {
        Self::new(
            name,
            kind,
            DType::F32,
            shape,
            data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn is_kernel(&self) -> bool {
        self.kind != TensorKind::Param
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    kind: TensorKind,
    dtype: DType,
    axes: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    tensors: Vec<IndexEntry>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tensor: NamedTensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(Error::Argument(format!("duplicate tensor name {}", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn kernels(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter().filter(|t| t.is_kernel())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let offset = payload.len();
            match t.dtype {
                DType::F32 => {
                    for &v in &t.data {
                        payload.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                DType::F64 => {
                    for &v in &t.data {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            entries.push(IndexEntry {
                name: t.name.clone(),
                kind: t.kind,
                dtype: t.dtype,
                axes: t.kind.axes().to_string(),
                shape: t.shape.clone(),
                offset,
                len: payload.len() - offset,
            });
        }
        let index = serde_json::to_vec(&Index { tensors: entries }).expect("index serializes");
        let mut out = Vec::with_capacity(16 + index.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a weight archive".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let index_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let index_end = 16usize
            .checked_add(index_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("archive index truncated".into()))?;
        let index: Index = serde_json::from_slice(&bytes[16..index_end])
            .map_err(|e| Error::Format(format!("archive index: {e}")))?;
        let payload = &bytes[index_end..];
        let mut archive = WeightArchive::new();
        let mut consumed = 0;
        for e in index.tensors {
            if e.axes != e.kind.axes() {
                return Err(Error::Format(format!(
                    "{}: axis order {} does not match kind {:?}",
                    e.name, e.axes, e.kind
                )));
            }
            let count: usize = e.shape.iter().product();
            if e.len != count * e.dtype.size() || e.offset + e.len > payload.len() {
                return Err(Error::Format(format!("{}: payload bounds invalid", e.name)));
            }
            let raw = &payload[e.offset..e.offset + e.len];
            let data: Vec<f64> = match e.dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            };
            consumed += e.len;
            archive.insert(NamedTensor::new(e.name, e.kind, e.dtype, e.shape, data)?)?;
        }
        if consumed != payload.len() {
            return Err(Error::Format("archive payload has unreferenced bytes".into()));
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Hex SHA-256 of the encoded archive.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.encode()))
    }
}
