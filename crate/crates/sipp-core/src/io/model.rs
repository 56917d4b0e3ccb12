//! Model bundle: a `model.json` manifest plus a `weights.bin` blob.
//!
//! The manifest lists each layer's kind, shape fields, activation, and the
//! byte offset of its tensors inside `weights.bin`. The blob holds raw
//! little-endian f64 values, layers concatenated in order, each tensor
//! row-major, with a layer's bias (when present) immediately after its
//! weight tensor. Zeros are stored explicitly; the manifest's `nnz` field
//! records effective sparsity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, LayerKind, LayerSpec, Network};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "model.json";
pub const WEIGHTS_NAME: &str = "weights.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    /// Count of nonzero weight entries across all layers (biases excluded).
    pub nnz: u64,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerManifest {
    Dense {
        out_features: u64,
        in_features: u64,
        activation: String,
        weights_offset: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias_offset: Option<u64>,
    },
    Conv2d {
        out_channels: u64,
        in_channels: u64,
        kernel_h: u64,
        kernel_w: u64,
        stride: u64,
        padding: u64,
        activation: String,
        weights_offset: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias_offset: Option<u64>,
    },
}

pub fn parse_manifest(bytes: &[u8]) -> Result<ModelManifest> {
    let manifest: ModelManifest = serde_json::from_slice(bytes)?;
    if manifest.version != 1 {
        return Err(Error::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Manifest(format!("{what} {v} too large")))
}

/// Reads `count` f64 values at byte `offset`, bounds-checked before any
/// allocation.
fn read_f64s(blob: &[u8], offset: u64, count: usize, what: &str) -> Result<Vec<f64>> {
    let offset = to_usize(offset, "offset")?;
    let byte_len = count
        .checked_mul(8)
        .ok_or_else(|| Error::Manifest(format!("{what}: length overflow")))?;
    let end = offset
        .checked_add(byte_len)
        .ok_or_else(|| Error::Manifest(format!("{what}: offset overflow")))?;
    if end > blob.len() {
        return Err(Error::Manifest(format!(
            "{what}: bytes {offset}..{end} out of range (blob has {})",
            blob.len()
        )));
    }
    Ok(blob[offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reconstructs a network from a parsed manifest and the weight blob.
pub fn model_from_parts(manifest: &ModelManifest, blob: &[u8]) -> Result<Network> {
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (idx, lm) in manifest.layers.iter().enumerate() {
        let bad = |msg: String| Error::Manifest(format!("layer {idx}: {msg}"));
        let (kind, activation, weights_offset, bias_offset) = match lm {
            LayerManifest::Dense {
                out_features,
                in_features,
                activation,
                weights_offset,
                bias_offset,
            } => {
                let kind = LayerKind::Dense {
                    out_features: to_usize(*out_features, "out_features")?,
                    in_features: to_usize(*in_features, "in_features")?,
                };
                (kind, activation, *weights_offset, *bias_offset)
            }
            LayerManifest::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                activation,
                weights_offset,
                bias_offset,
            } => {
                let kind = LayerKind::Conv2d {
                    out_channels: to_usize(*out_channels, "out_channels")?,
                    in_channels: to_usize(*in_channels, "in_channels")?,
                    kernel_h: to_usize(*kernel_h, "kernel_h")?,
                    kernel_w: to_usize(*kernel_w, "kernel_w")?,
                    stride: to_usize(*stride, "stride")?,
                    padding: to_usize(*padding, "padding")?,
                };
                (kind, activation, *weights_offset, *bias_offset)
            }
        };
        let activation = Activation::parse(activation).map_err(|e| bad(e.to_string()))?;
        let shape = kind.weight_shape();
        if shape.contains(&0) {
            return Err(bad(format!("zero extent in weight shape {shape:?}")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| bad("weight shape overflows".into()))?;
        let w_data = read_f64s(blob, weights_offset, numel, "weights")?;
        let weights = Tensor::new(shape, w_data).map_err(|e| bad(e.to_string()))?;
        let bias = match bias_offset {
            Some(off) => {
                let b_data = read_f64s(blob, off, kind.group_count(), "bias")?;
                Some(Tensor::new(vec![kind.group_count()], b_data).map_err(|e| bad(e.to_string()))?)
            }
            None => None,
        };
        layers.push(LayerSpec::new(kind, activation, weights, bias).map_err(|e| bad(e.to_string()))?);
    }
    Network::new(layers).map_err(|e| Error::Manifest(e.to_string()))
}

/// Serializes a network into (manifest, weight blob), laying tensors out
/// sequentially in layer order.
pub fn model_to_parts(net: &Network) -> (ModelManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(net.layer_count());
    let mut nnz = 0u64;
    for layer in net.layers() {
        let weights_offset = blob.len() as u64;
        for &v in layer.weights.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        nnz += layer.weights.data().iter().filter(|&&v| v != 0.0).count() as u64;
        let bias_offset = layer.bias.as_ref().map(|b| {
            let off = blob.len() as u64;
            for &v in b.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            off
        });
        let activation = layer.activation.name().to_string();
        layers.push(match layer.kind {
            LayerKind::Dense {
                out_features,
                in_features,
            } => LayerManifest::Dense {
                out_features: out_features as u64,
                in_features: in_features as u64,
                activation,
                weights_offset,
                bias_offset,
            },
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => LayerManifest::Conv2d {
                out_channels: out_channels as u64,
                in_channels: in_channels as u64,
                kernel_h: kernel_h as u64,
                kernel_w: kernel_w as u64,
                stride: stride as u64,
                padding: padding as u64,
                activation,
                weights_offset,
                bias_offset,
            },
        });
    }
    (
        ModelManifest {
            version: 1,
            nnz,
            layers,
        },
        blob,
    )
}

/// Writes `model.json` and `weights.bin` into `dir`, creating it if needed.
pub fn write_model(dir: impl AsRef<Path>, net: &Network) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (manifest, blob) = model_to_parts(net);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST_NAME), json)?;
    fs::write(dir.join(WEIGHTS_NAME), blob)?;
    Ok(())
}

pub fn read_model(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let manifest = parse_manifest(&fs::read(dir.join(MANIFEST_NAME))?)?;
    let blob = fs::read(dir.join(WEIGHTS_NAME))?;
    model_from_parts(&manifest, &blob)
}
