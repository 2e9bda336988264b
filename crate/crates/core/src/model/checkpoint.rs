//! Binary checkpoint format.
//!
//! ```text
//! magic (8 bytes) | version u32 LE | header length u64 LE | JSON header | arrays
//! ```
//!
//! Arrays are raw little-endian values of the header's dtype, at the byte
//! offsets the header lists (relative to the start of the array section).
//! Auxiliary arrays carry optimizer state when present.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CheckpointKind, ModelParameters, StepCounters, TransformerConfig};
use crate::autodiff::{ParamGroup, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADPTLAB\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    group: Option<ParamGroup>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    kind: CheckpointKind,
    config: TransformerConfig,
    counters: StepCounters,
    params: Vec<ArrayHeader>,
    aux: Vec<ArrayHeader>,
    aux_meta: serde_json::Value,
}

/// A model plus optional named auxiliary arrays and metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: ModelParameters<T>,
    pub aux: Vec<(String, Matrix<T>)>,
    pub aux_meta: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: ModelParameters<T>) -> Self {
        Self {
            model,
            aux: Vec::new(),
            aux_meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut entry = |name: &str, group, m: &Matrix<T>| {
            let h = ArrayHeader {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
                group,
                offset: data.len(),
            };
            for &x in m.data() {
                x.write_le(&mut data);
            }
            h
        };
        let params = self
            .model
            .params
            .entries()
            .iter()
            .map(|e| entry(&e.name, Some(e.group), e.value()))
            .collect();
        let aux = self.aux.iter().map(|(n, m)| entry(n, None, m)).collect();
        let header = Header {
            dtype: T::DTYPE.to_string(),
            kind: self.model.kind,
            config: self.model.config.clone(),
            counters: self.model.counters,
            params,
            aux,
            aux_meta: self.aux_meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    /// Parses a checkpoint, converting arrays to `T` if stored in another
    /// precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic bytes)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).unwrap_or_default();
        if hlen > body.len() {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let data = &body[hlen..];
        match header.dtype.as_str() {
            "f32" => Self::read_arrays::<f32>(header, data),
            "f64" => Self::read_arrays::<f64>(header, data),
            other => Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
        }
    }

    fn read_arrays<S: Scalar>(header: Header, data: &[u8]) -> Result<Self> {
        let read = |h: &ArrayHeader| -> Result<Matrix<T>> {
            let n = h.shape[0] * h.shape[1];
            let end = h.offset + n * S::BYTES;
            let raw = data
                .get(h.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("array `{}` runs past end of file", h.name)))?;
            let vals: Vec<S> = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
            let m = Matrix::from_vec(h.shape[0], h.shape[1], vals)?;
            if !m.is_finite() {
                return Err(Error::Checkpoint(format!("array `{}` holds non-finite values", h.name)));
            }
            Ok(m.cast())
        };
        let mut params = ParamSet::new();
        for h in &header.params {
            let group = h
                .group
                .ok_or_else(|| Error::Checkpoint(format!("array `{}` has no group tag", h.name)))?;
            if params.index_of(&h.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array `{}`", h.name)));
            }
            params.push(h.name.clone(), group, read(h)?);
        }
        let mut model = ModelParameters::from_params(header.config, params)?;
        model.kind = header.kind;
        model.counters = header.counters;
        let aux = header
            .aux
            .iter()
            .map(|h| Ok((h.name.clone(), read(h)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            aux,
            aux_meta: header.aux_meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint<T: Scalar>(model: &ModelParameters<T>, path: &Path) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParameters<T>> {
    Ok(Checkpoint::load(path)?.model)
}
