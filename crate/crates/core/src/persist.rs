//! Model files.
//!
//! Layout: the 8-byte magic `TFNMODEL`, a little-endian `u32` format version,
//! a little-endian `u64` byte length of the JSON header, the header itself,
//! then every parameter tensor as little-endian `f64` values in the order the
//! header lists them. The header records the [`ModelConfig`] and, per tensor,
//! its name and shape.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfnError};
use crate::model::{ModelConfig, TfnModel};

pub const MAGIC: &[u8; 8] = b"TFNMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn model_to_bytes(model: &TfnModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut values = 0;
    model.for_each_param(|p| {
        tensors.push(TensorEntry {
            name: p.name.to_string(),
            shape: p.tensor.shape().to_vec(),
        });
        values += p.tensor.len();
    });
    let header = serde_json::to_vec(&ModelHeader {
        config: model.config.clone(),
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + 8 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    model.for_each_param(|p| {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TfnModel> {
    let bad = |m: String| TfnError::ModelFormat(m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {version}, expected {MODEL_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(header_len))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: ModelHeader = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    let mut model = TfnModel::zeros(header.config.clone())?;
    let names = model.param_names();
    if names.len() != header.tensors.len() {
        return Err(bad(format!("expected {} tensors, header lists {}", names.len(), header.tensors.len())));
    }
    let mut offset = 20 + header_len;
    for ((name, entry), param) in names.iter().zip(&header.tensors).zip(model.params_mut()) {
        if *name != entry.name || param.shape() != entry.shape.as_slice() {
            return Err(bad(format!(
                "tensor `{}` {:?} does not match expected `{name}` {:?}",
                entry.name,
                entry.shape,
                param.shape()
            )));
        }
        let n = param.len() * 8;
        let raw = bytes
            .get(offset..offset + n)
            .ok_or_else(|| bad(format!("truncated data for `{name}`")))?;
        for (dst, chunk) in param.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        if !param.is_finite() {
            return Err(bad(format!("non-finite weight in `{name}`")));
        }
        offset += n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(model)
}

pub fn save_model(model: &TfnModel, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| TfnError::io(path, e))?;
    f.write_all(&model_to_bytes(model)).map_err(|e| TfnError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TfnModel> {
    let bytes = fs::read(path).map_err(|e| TfnError::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionVariant;
    use crate::inference::Task;
    use crate::model::ArchConfig;

    fn small() -> TfnModel {
        let config = ModelConfig {
            arch: ArchConfig {
                projection_dim: 3,
                lstm_hidden: 2,
                language_dim: 2,
                t_max: 3,
                subnet_width: 2,
                trunk_width: 3,
            },
            word_dim: 4,
            visual_dim: 2,
            acoustic_dim: 3,
            variant: FusionVariant::Bimodal,
            task: Task::FiveClass,
        };
        TfnModel::new(config, 11).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = small();
        let back = model_from_bytes(&model_to_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = model_to_bytes(&small());
        assert!(model_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(TfnError::ModelFormat(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(model_from_bytes(&extra).is_err());
    }
}
