//! `FPGAP-MODEL-v1` container: a TOML manifest headed by the magic line,
//! plus a sibling blob of little-endian `f32` values.
//!
//! ```text
//! FPGAP-MODEL-v1
//! kind = "network"
//! blob = "demo.bin"
//! input_shape = [8, 8, 1]
//!
//! [[layers]]
//! type = "conv2d"
//! out_ch = 4
//! in_ch = 1
//! kh = 3
//! kw = 3
//! padding = 0
//!
//! [[layers]]
//! type = "relu"
//! ```
//!
//! Blob order follows the layer list: conv weights in
//! `(out_ch, in_ch, kh, kw)` order then bias, dense weights row-major then
//! bias. Any length mismatch, malformed manifest, inconsistent shape or
//! non-finite value is a load error.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, Network};
use crate::tensor::Shape;

pub const MAGIC: &str = "FPGAP-MODEL-v1";

/// Layer hyper-parameters without weights, as written in manifests and
/// architecture configs.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d { out_ch: usize, in_ch: usize, kh: usize, kw: usize, padding: usize },
    Dense { rows: usize, cols: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn of(layer: &Layer) -> LayerSpec {
        match layer {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                out_ch: c.out_ch,
                in_ch: c.in_ch,
                kh: c.kh,
                kw: c.kw,
                padding: c.padding,
            },
            Layer::Dense(d) => LayerSpec::Dense { rows: d.rows, cols: d.cols },
            Layer::Relu => LayerSpec::Relu,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    /// `(weights, biases)` parameter counts.
    pub fn parameter_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d { out_ch, in_ch, kh, kw, .. } => (out_ch * in_ch * kh * kw, out_ch),
            LayerSpec::Dense { rows, cols } => (rows * cols, rows),
            LayerSpec::Relu | LayerSpec::Flatten => (0, 0),
        }
    }

    /// Layer with the given parameters (counts must match).
    pub fn build(&self, weights: Vec<f32>, bias: Vec<f32>) -> Layer {
        match *self {
            LayerSpec::Conv2d { out_ch, in_ch, kh, kw, padding } => {
                Layer::Conv2d(Conv2d { out_ch, in_ch, kh, kw, padding, weights, bias })
            }
            LayerSpec::Dense { rows, cols } => Layer::Dense(Dense { rows, cols, weights, bias }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
        }
    }
}

#[derive(Serialize, Deserialize, Debug)]
struct NetworkManifest {
    kind: String,
    blob: String,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

/// Write `body` as a manifest headed by the magic line.
pub(crate) fn write_manifest<M: Serialize>(path: &Path, body: &M) -> Result<()> {
    let text = toml::to_string(body).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, format!("{MAGIC}\n{text}"))?;
    Ok(())
}

pub(crate) fn read_manifest<M: DeserializeOwned>(path: &Path) -> Result<M> {
    let text = fs::read_to_string(path)?;
    let (head, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if head.trim_end() != MAGIC {
        return Err(Error::Format(format!("missing {MAGIC} header in {}", path.display())));
    }
    toml::from_str(body).map_err(|e| Error::Format(e.to_string()))
}

/// Blob path for a manifest: same stem, `.bin` extension.
pub(crate) fn blob_name(manifest: &Path) -> String {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    format!("{stem}.bin")
}

pub(crate) fn resolve_blob(manifest: &Path, blob: &str) -> Result<PathBuf> {
    let rel = Path::new(blob);
    if rel.is_absolute() || rel.components().count() != 1 {
        return Err(Error::Format(format!("blob path must be a sibling file name, got {blob:?}")));
    }
    Ok(manifest.parent().unwrap_or(Path::new(".")).join(rel))
}

pub(crate) fn encode_f32(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!("blob length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Serialize a network next to `path` (`<stem>.bin` holds the parameters).
pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let blob = blob_name(path);
    let layers = net.layers().iter().map(LayerSpec::of).collect();
    let s = net.input_shape();
    let manifest = NetworkManifest {
        kind: "network".into(),
        blob: blob.clone(),
        input_shape: [s.height, s.width, s.channels],
        layers,
    };
    fs::write(resolve_blob(path, &blob)?, encode_f32(net.parameters()))?;
    write_manifest(path, &manifest)
}

pub fn load_model(path: &Path) -> Result<Network> {
    let manifest: NetworkManifest = read_manifest(path)?;
    if manifest.kind != "network" {
        return Err(Error::Format(format!("expected kind \"network\", found {:?}", manifest.kind)));
    }
    let values = decode_f32(&fs::read(resolve_blob(path, &manifest.blob)?)?)?;
    let mut cursor = values.into_iter();
    let mut take = |n: usize, what: &str| -> Result<Vec<f32>> {
        let v: Vec<f32> = cursor.by_ref().take(n).collect();
        if v.len() != n {
            return Err(Error::Format(format!("blob truncated while reading {what}")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{what} in model blob")));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, spec) in manifest.layers.iter().enumerate() {
        let (nw, nb) = spec.parameter_counts();
        let weights = take(nw, &format!("layer {i} weights"))?;
        let bias = take(nb, &format!("layer {i} bias"))?;
        layers.push(spec.build(weights, bias));
    }
    if cursor.next().is_some() {
        return Err(Error::Format("trailing values in model blob".into()));
    }
    let [h, w, c] = manifest.input_shape;
    Network::new(Shape::new(h, w, c), layers).map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(m),
        other => Error::Format(other.to_string()),
    })
}
