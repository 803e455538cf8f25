//! Binary scene checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 8            | magic `LSLFCKPT`                                    |
//! | 4 (u32)      | format version, currently 1                         |
//! | 4 (u32) + n  | JSON metadata: partition and per-model architecture |
//! | 4 (u32)      | tensor count                                        |
//! | per tensor   | u32 name length, UTF-8 name, u32 rank, u32 dims, f32 data |
//!
//! Tensors are named `model.{i}.grid` for feature grids and
//! `model.{i}.decoder.{layer}.{param}` for decoder weights and running
//! statistics, in the order the model stores them. A file must contain
//! exactly the tensors its metadata implies, with matching shapes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::DecoderParams;
use crate::encoder::RayEncoder;
use crate::error::{Error as CrateError, Result};
use crate::geometry::{CameraModel, CoordBounds, RaySpace};
use crate::model::{LightFieldModel, ModelSpec, SceneModel};
use crate::partition::Partition;

pub const MAGIC: &[u8; 8] = b"LSLFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: String },
    #[error("invalid checkpoint metadata: {0}")]
    Metadata(String),
    #[error("tensor {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("expected tensor {expected}, found {found}")]
    UnexpectedTensor { expected: String, found: String },
    #[error("checkpoint has {expected} tensors in its metadata but declares {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    spec: ModelSpec,
    ray_space: RaySpace,
    bounds: CoordBounds,
    camera: CameraModel,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    partition: Partition,
    models: Vec<ModelMeta>,
}

struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn model_tensors(i: usize, m: &LightFieldModel<f32>) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    if let RayEncoder::Grid(g) = &m.encoder {
        out.push(NamedTensor { name: format!("model.{i}.grid"), shape: vec![g.data().len()], data: g.data().to_vec() });
    }
    for t in m.decoder.tensors() {
        out.push(NamedTensor { name: format!("model.{i}.decoder.{}", t.name), shape: t.shape, data: t.data.to_vec() });
    }
    out
}

/// Serializes a scene into checkpoint bytes.
pub fn to_bytes(scene: &SceneModel) -> Vec<u8> {
    let meta = Metadata {
        partition: scene.partition.clone(),
        models: scene
            .sub_models
            .iter()
            .map(|m| ModelMeta { spec: m.spec(), ray_space: m.ray_space, bounds: m.bounds, camera: m.camera })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let tensors: Vec<NamedTensor> =
        scene.sub_models.iter().enumerate().flat_map(|(i, m)| model_tensors(i, m)).collect();

    let mut out = Vec::new();
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, tensors.len());
    for t in &tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated { what: what.to_string() });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses checkpoint bytes. Either the whole scene loads or an error is returned.
pub fn from_bytes(bytes: &[u8]) -> Result<SceneModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, expected: VERSION }.into());
    }
    let meta_len = r.u32("metadata length")?;
    let meta: Metadata =
        serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    if meta.models.is_empty() {
        return Err(CheckpointError::Metadata("no models".into()).into());
    }

    // Build models from metadata, then overwrite their tensors in order.
    let mut models = meta
        .models
        .iter()
        .map(|m| {
            LightFieldModel::<f32>::new(&m.spec, m.ray_space, m.bounds, m.camera, 0)
                .map_err(|e| CheckpointError::Metadata(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let expected: usize = models.iter().enumerate().map(|(i, m)| model_tensors(i, m).len()).sum();
    let count = r.u32("tensor count")?;
    if count != expected {
        return Err(CheckpointError::TensorCount { expected, found: count }.into());
    }
    for (i, model) in models.iter_mut().enumerate() {
        let slots = model_tensors(i, model);
        let mut loaded = Vec::with_capacity(slots.len());
        for slot in &slots {
            let name_len = r.u32("tensor name length")?;
            let name = String::from_utf8_lossy(r.take(name_len, "tensor name")?).into_owned();
            if name != slot.name {
                return Err(CheckpointError::UnexpectedTensor { expected: slot.name.clone(), found: name }.into());
            }
            let rank = r.u32(&format!("{name} rank"))?;
            let shape = (0..rank).map(|_| r.u32(&format!("{name} shape"))).collect::<Result<Vec<_>, _>>()?;
            if shape != slot.shape {
                return Err(CheckpointError::ShapeMismatch { name, expected: slot.shape.clone(), found: shape }.into());
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4, &name)?;
            let data =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect::<Vec<f32>>();
            loaded.push((name, data));
        }
        let mut it = loaded.into_iter();
        if let RayEncoder::Grid(g) = &mut model.encoder {
            g.replace_data(it.next().expect("grid tensor").1)?;
        }
        fill_decoder(&mut model.decoder, it);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
    }
    SceneModel::new(meta.partition, models)
}

fn fill_decoder(decoder: &mut DecoderParams<f32>, tensors: impl Iterator<Item = (String, Vec<f32>)>) {
    for (slot, (name, data)) in decoder.tensors_mut().into_iter().zip(tensors) {
        debug_assert!(name.ends_with(&slot.name));
        *slot.data = data;
    }
}

pub fn save_checkpoint(scene: &SceneModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CrateError::io(parent, e))?;
    }
    // write-then-rename so an interrupted save never clobbers a good file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(scene)).map_err(|e| CrateError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CrateError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SceneModel> {
    let bytes = fs::read(path).map_err(|e| CrateError::io(path, e))?;
    from_bytes(&bytes)
}
