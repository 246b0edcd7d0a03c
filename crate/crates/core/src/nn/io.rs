//! Model file: the 8-byte magic `SPDFLDM\0`, a little-endian `u32` format
//! version, then a bincode-encoded [`ModelRecord`]. Parameters are stored as
//! `f64`, which round-trips `f32` models exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::KernelMask;

use super::{Architecture, ConvLayer, ConvModel, DType, MaskSpec, Real};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPDFLDM\0";

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    c_in: usize,
    c_out: usize,
    k_h: usize,
    k_w: usize,
    mask: Vec<bool>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    dtype: DType,
    architecture: Architecture,
    masks: MaskSpec,
    v_scale: f64,
    layers: Vec<LayerRecord>,
}

pub(crate) fn model_to_bytes<T: Real>(model: &ConvModel<T>) -> Result<Vec<u8>> {
    let record = ModelRecord {
        dtype: T::DTYPE,
        architecture: model.architecture().clone(),
        masks: *model.mask_spec(),
        v_scale: model.v_scale(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                c_in: l.c_in(),
                c_out: l.c_out(),
                k_h: l.mask().k_h(),
                k_w: l.mask().k_w(),
                mask: l.mask().cells().to_vec(),
                weights: l.weights().iter().map(|v| v.as_f64()).collect(),
                bias: l.bias().iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    bincode::serialize_into(&mut out, &record).map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(out)
}

pub(crate) fn model_from_bytes<T: Real>(bytes: &[u8]) -> Result<ConvModel<T>> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {version}, this build reads {MODEL_FORMAT_VERSION}"
        )));
    }
    let record: ModelRecord = bincode::deserialize(&bytes[12..])
        .map_err(|e| Error::ModelFormat(format!("corrupt or truncated: {e}")))?;
    let layers = record
        .layers
        .into_iter()
        .enumerate()
        .map(|(k, l)| {
            let mask = KernelMask::from_cells(l.k_h, l.k_w, l.mask)
                .map_err(|e| Error::ModelFormat(format!("layer {k}: {e}")))?;
            let cast = |v: Vec<f64>| v.into_iter().map(T::lit).collect();
            ConvLayer::from_parts(l.c_in, l.c_out, mask, cast(l.weights), cast(l.bias))
                .map_err(|e| Error::ModelFormat(format!("layer {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ConvModel::from_layers(record.architecture, record.masks, record.v_scale, layers)
        .map_err(|e| Error::ModelFormat(e.to_string()))
}

pub fn save_model<T: Real>(model: &ConvModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

/// Loads a model, converting stored parameters to `T`.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ConvModel<T>> {
    model_from_bytes(&fs::read(path)?)
}
