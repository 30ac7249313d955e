//! Working-directory layout shared with an external diffusion backend.
//!
//! ```text
//! session.json            manifest: backend id/version and layer registry
//! {layer_id}_q.vtnk       tapped queries, tokens × (heads·head_dim)
//! {layer_id}_k.vtnk       tapped keys
//! {layer_id}_v.vtnk       tapped values
//! {layer_id}_out.vtnk     attention output to substitute at that layer
//! eps.vtnk                noise prediction of the step
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tensor::{read_interchange, write_interchange, InterchangeTensor};
use super::{io_err, IoError};
use crate::attention::AttentionTensors;
use crate::pipeline::LayerInfo;

pub const MANIFEST_FILE: &str = "session.json";
pub const NOISE_PREDICTION_FILE: &str = "eps.vtnk";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Query,
    Key,
    Value,
}

impl Projection {
    pub fn suffix(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
        }
    }
}

pub fn tensor_file_name(layer_id: &str, projection: Projection) -> String {
    format!("{layer_id}_{}.vtnk", projection.suffix())
}

pub fn injection_file_name(layer_id: &str) -> String {
    format!("{layer_id}_out.vtnk")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub id: String,
    pub tokens: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl LayerEntry {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

impl From<&LayerEntry> for LayerInfo {
    fn from(e: &LayerEntry) -> Self {
        LayerInfo {
            id: e.id.clone(),
            heads: e.heads,
            head_dim: e.head_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub backend: String,
    pub backend_version: String,
    pub layers: Vec<LayerEntry>,
}

impl SessionManifest {
    pub fn validate(&self) -> Result<(), IoError> {
        for (i, l) in self.layers.iter().enumerate() {
            let bad_id = l.id.is_empty() || l.id.contains(['/', '\\']) || l.id == "." || l.id == "..";
            if bad_id {
                return Err(IoError::MalformedDocument(format!("invalid layer id {:?}", l.id)));
            }
            if self.layers[..i].iter().any(|o| o.id == l.id) {
                return Err(IoError::MalformedDocument(format!("duplicate layer id {:?}", l.id)));
            }
            if l.tokens == 0 || l.heads == 0 || l.head_dim == 0 {
                return Err(IoError::MalformedDocument(format!(
                    "layer {:?} has an empty dimension",
                    l.id
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self, id: &str) -> Result<&LayerEntry, IoError> {
        self.layers
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| IoError::UnknownLayer(id.to_owned()))
    }
}

pub fn write_manifest(dir: &Path, manifest: &SessionManifest) -> Result<(), IoError> {
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| IoError::MalformedDocument(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<SessionManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: SessionManifest =
        serde_json::from_str(&text).map_err(|e| IoError::MalformedDocument(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

fn check_shape(layer: &LayerEntry, what: &str, dims: (usize, usize)) -> Result<(), IoError> {
    if dims != (layer.tokens, layer.width()) {
        return Err(IoError::ShapeMismatch(format!(
            "layer {} {what}: {:?}, registry says ({}, {})",
            layer.id,
            dims,
            layer.tokens,
            layer.width()
        )));
    }
    Ok(())
}

fn to_interchange(m: &Array2<f64>) -> InterchangeTensor {
    InterchangeTensor {
        dims: vec![m.nrows(), m.ncols()],
        data: m.iter().map(|&v| v as f32).collect(),
    }
}

fn read_matrix(path: &Path, layer: &LayerEntry, what: &str) -> Result<Array2<f64>, IoError> {
    let t = read_interchange(path)?;
    let &[n, d] = t.dims.as_slice() else {
        return Err(IoError::RankMismatch {
            expected: 2,
            got: t.dims.len(),
        });
    };
    check_shape(layer, what, (n, d))?;
    Ok(Array2::from_shape_vec((n, d), t.data.iter().map(|&v| v as f64).collect()).expect("dims checked"))
}

/// Writes the three projection files of one layer. Shapes are checked
/// against the registry before anything is written.
pub fn write_attention_tensors(
    dir: &Path,
    manifest: &SessionManifest,
    layer_id: &str,
    tensors: &AttentionTensors,
) -> Result<(), IoError> {
    let layer = manifest.layer(layer_id)?;
    check_shape(layer, "tensors", tensors.q.dim())?;
    for (p, m) in [
        (Projection::Query, &tensors.q),
        (Projection::Key, &tensors.k),
        (Projection::Value, &tensors.v),
    ] {
        write_interchange(&dir.join(tensor_file_name(layer_id, p)), &to_interchange(m))?;
    }
    Ok(())
}

pub fn read_attention_tensors(
    dir: &Path,
    manifest: &SessionManifest,
    layer_id: &str,
) -> Result<AttentionTensors, IoError> {
    let layer = manifest.layer(layer_id)?;
    let read = |p: Projection| read_matrix(&dir.join(tensor_file_name(layer_id, p)), layer, p.suffix());
    Ok(AttentionTensors::new(
        read(Projection::Query)?,
        read(Projection::Key)?,
        read(Projection::Value)?,
    )?)
}

pub fn write_injection(
    dir: &Path,
    manifest: &SessionManifest,
    layer_id: &str,
    output: &Array2<f64>,
) -> Result<(), IoError> {
    let layer = manifest.layer(layer_id)?;
    check_shape(layer, "injection", output.dim())?;
    write_interchange(&dir.join(injection_file_name(layer_id)), &to_interchange(output))
}

pub fn read_injection(dir: &Path, manifest: &SessionManifest, layer_id: &str) -> Result<Array2<f64>, IoError> {
    let layer = manifest.layer(layer_id)?;
    read_matrix(&dir.join(injection_file_name(layer_id)), layer, "injection")
}
