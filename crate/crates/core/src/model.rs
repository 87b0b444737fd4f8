//! Layer-chain model IR: types, validation, and manifest/blob serialization.
//!
//! A model is a linear chain of Conv2D/Dense layers ending in a Dense
//! classifier. On disk it is a JSON manifest plus a companion `.bin` blob of
//! raw little-endian f32 values; offsets and lengths in the manifest are in
//! elements, not bytes, so the interchange is bit-exact.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::TensorBlob;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Identity,
}

/// One layer of the chain. `out_spatial` is stored, not inferred: cost
/// accounting and the forward pass both check against it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_spatial: usize,
    pub weights: TensorBlob,
    pub bias: TensorBlob,
    pub activation: Activation,
    pub prunable_out: bool,
}

impl LayerNode {
    /// Expected weight shape for this layer's kind and channel counts.
    pub fn expected_weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv2D => vec![
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel,
            ],
            LayerKind::Dense => vec![self.out_channels, self.in_channels],
        }
    }

    /// Conv weight at [oc, ic, kh, kw] in the flat row-major blob.
    #[inline]
    pub fn conv_weight(&self, oc: usize, ic: usize, kh: usize, kw: usize) -> f32 {
        let k = self.kernel;
        self.weights.data[((oc * self.in_channels + ic) * k + kh) * k + kw]
    }

    /// Dense weight at [oc, ic].
    #[inline]
    pub fn dense_weight(&self, oc: usize, ic: usize) -> f32 {
        self.weights.data[oc * self.in_channels + ic]
    }
}

/// Immutable layer chain plus input/output contract. Mutating operations
/// (pruning) return new graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub layers: Vec<LayerNode>,
    /// [channels, height, width]; height == width.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl ModelGraph {
    pub fn is_valid(&self) -> bool {
        validate_graph(self).is_empty()
    }

    /// Bitwise equality of structure and every weight/bias value.
    pub fn bits_eq(&self, other: &ModelGraph) -> bool {
        self.input_shape == other.input_shape
            && self.num_classes == other.num_classes
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.id == b.id
                    && a.kind == b.kind
                    && a.in_channels == b.in_channels
                    && a.out_channels == b.out_channels
                    && a.kernel == b.kernel
                    && a.stride == b.stride
                    && a.out_spatial == b.out_spatial
                    && a.activation == b.activation
                    && a.prunable_out == b.prunable_out
                    && a.weights.bits_eq(&b.weights)
                    && a.bias.bits_eq(&b.bias)
            })
    }
}

/// One validation finding; empty diagnostics means the graph is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub layer: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layer {
            Some(id) => write!(f, "layer '{id}': {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn diag(layer: Option<&str>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        layer: layer.map(String::from),
        message: message.into(),
    }
}

/// Checks every structural invariant of the IR. Returns diagnostics instead
/// of failing on the first problem.
pub fn validate_graph(graph: &ModelGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let [in_ch, in_h, in_w] = graph.input_shape;

    if in_ch == 0 || in_h == 0 || in_w == 0 {
        out.push(diag(None, "input_shape has a zero dimension"));
    }
    if in_h != in_w {
        out.push(diag(
            None,
            format!("input spatial dims must be square, got {in_h}x{in_w}"),
        ));
    }
    if graph.num_classes == 0 {
        out.push(diag(None, "num_classes must be positive"));
    }
    if graph.layers.is_empty() {
        out.push(diag(None, "graph has no layers"));
        return out;
    }

    let mut seen = std::collections::HashSet::new();
    for layer in &graph.layers {
        if !seen.insert(layer.id.as_str()) {
            out.push(diag(Some(&layer.id), "duplicate layer id"));
        }
    }

    let mut prev_out = in_ch;
    let mut prev_id: Option<&str> = None;
    let mut spatial = in_h;
    for layer in &graph.layers {
        let id = Some(layer.id.as_str());
        if layer.in_channels == 0 || layer.out_channels == 0 {
            out.push(diag(id, "zero channel count"));
        }
        if layer.kernel == 0 || layer.stride == 0 || layer.out_spatial == 0 {
            out.push(diag(id, "kernel, stride and out_spatial must be positive"));
        }
        if layer.in_channels != prev_out {
            out.push(diag(
                id,
                format!(
                    "in_channels {} does not match upstream output {} (after '{}')",
                    layer.in_channels,
                    prev_out,
                    prev_id.unwrap_or("<input>")
                ),
            ));
        }
        let expected = layer.expected_weight_shape();
        if layer.weights.shape != expected {
            out.push(diag(
                id,
                format!(
                    "weight shape {:?} does not match expected {:?}",
                    layer.weights.shape, expected
                ),
            ));
        }
        if !layer.weights.is_consistent() {
            out.push(diag(id, "weights are inconsistent or non-finite"));
        }
        if layer.bias.shape != vec![layer.out_channels] {
            out.push(diag(
                id,
                format!(
                    "bias shape {:?} does not match [{}]",
                    layer.bias.shape, layer.out_channels
                ),
            ));
        }
        if !layer.bias.is_consistent() {
            out.push(diag(id, "bias is inconsistent or non-finite"));
        }
        match layer.kind {
            LayerKind::Dense => {
                if layer.kernel != 1 || layer.stride != 1 || layer.out_spatial != 1 {
                    out.push(diag(id, "dense layers must have kernel=stride=out_spatial=1"));
                }
                if spatial != 1 {
                    out.push(diag(
                        id,
                        format!("dense layer fed with spatial extent {spatial}, expected 1"),
                    ));
                }
                spatial = 1;
            }
            LayerKind::Conv2D => {
                if spatial < layer.kernel {
                    out.push(diag(
                        id,
                        format!(
                            "kernel {} larger than incoming spatial extent {spatial}",
                            layer.kernel
                        ),
                    ));
                } else {
                    let computed = (spatial - layer.kernel) / layer.stride + 1;
                    if computed != layer.out_spatial {
                        out.push(diag(
                            id,
                            format!(
                                "out_spatial {} does not match valid-convolution result {computed}",
                                layer.out_spatial
                            ),
                        ));
                    }
                }
                spatial = layer.out_spatial;
            }
        }
        prev_out = layer.out_channels;
        prev_id = Some(&layer.id);
    }

    let last = graph.layers.last().unwrap();
    if last.kind != LayerKind::Dense {
        out.push(diag(Some(&last.id), "final layer must be Dense"));
    }
    if last.out_channels != graph.num_classes {
        out.push(diag(
            Some(&last.id),
            format!(
                "final layer emits {} channels, num_classes is {}",
                last.out_channels, graph.num_classes
            ),
        ));
    }
    if last.activation != Activation::Identity {
        out.push(diag(Some(&last.id), "final layer activation must be Identity"));
    }
    if last.prunable_out {
        out.push(diag(Some(&last.id), "final classifier layer must not be prunable"));
    }
    out
}

// ---------------------------------------------------------------------------
// Manifest serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LayerManifest {
    id: String,
    kind: LayerKind,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    out_spatial: usize,
    activation: Activation,
    prunable_out: bool,
    weights_offset: usize,
    weights_len: usize,
    bias_offset: usize,
    bias_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    version: u32,
    input_shape: [usize; 3],
    num_classes: usize,
    layers: Vec<LayerManifest>,
    blob_file: String,
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn write_f32_blob(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn read_f32_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedManifest(format!(
            "blob {} has length {} not divisible by 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn blob_path(manifest_path: &Path, blob_file: &str) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) => dir.join(blob_file),
        None => PathBuf::from(blob_file),
    }
}

/// Writes `graph` as `<path>` (JSON manifest) plus a companion blob file
/// named after the manifest stem. Round-trips bit-exactly through
/// [`load_model`].
pub fn save_model(graph: &ModelGraph, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let blob_file = format!("{stem}.bin");

    let mut layers = Vec::with_capacity(graph.layers.len());
    let mut cursor = 0usize;
    for layer in &graph.layers {
        let weights_len = layer.weights.data.len();
        let bias_len = layer.bias.data.len();
        layers.push(LayerManifest {
            id: layer.id.clone(),
            kind: layer.kind,
            in_channels: layer.in_channels,
            out_channels: layer.out_channels,
            kernel: layer.kernel,
            stride: layer.stride,
            out_spatial: layer.out_spatial,
            activation: layer.activation,
            prunable_out: layer.prunable_out,
            weights_offset: cursor,
            weights_len,
            bias_offset: cursor + weights_len,
            bias_len,
        });
        cursor += weights_len + bias_len;
    }
    let manifest = ModelManifest {
        version: 1,
        input_shape: graph.input_shape,
        num_classes: graph.num_classes,
        layers,
        blob_file: blob_file.clone(),
    };

    write_f32_blob(
        &blob_path(path, &blob_file),
        graph
            .layers
            .iter()
            .flat_map(|l| l.weights.data.iter().chain(l.bias.data.iter()).copied()),
    )?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

/// Loads a manifest + blob pair and validates the result.
pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::MalformedManifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let blob = read_f32_blob(&blob_path(path, &manifest.blob_file))?;

    let slice = |offset: usize, len: usize, context: &str| -> Result<Vec<f32>> {
        if offset + len > blob.len() {
            return Err(Error::ShapeMismatch {
                context: context.to_string(),
                expected: len,
                actual: blob.len().saturating_sub(offset),
            });
        }
        Ok(blob[offset..offset + len].to_vec())
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let weight_shape = match lm.kind {
            LayerKind::Conv2D => vec![lm.out_channels, lm.in_channels, lm.kernel, lm.kernel],
            LayerKind::Dense => vec![lm.out_channels, lm.in_channels],
        };
        let expected: usize = weight_shape.iter().product();
        if expected != lm.weights_len {
            return Err(Error::ShapeMismatch {
                context: format!("weights of '{}'", lm.id),
                expected,
                actual: lm.weights_len,
            });
        }
        if lm.bias_len != lm.out_channels {
            return Err(Error::ShapeMismatch {
                context: format!("bias of '{}'", lm.id),
                expected: lm.out_channels,
                actual: lm.bias_len,
            });
        }
        let weights = TensorBlob::new(
            weight_shape,
            slice(lm.weights_offset, lm.weights_len, &format!("weights of '{}'", lm.id))?,
        );
        let bias = TensorBlob::new(
            vec![lm.out_channels],
            slice(lm.bias_offset, lm.bias_len, &format!("bias of '{}'", lm.id))?,
        );
        layers.push(LayerNode {
            id: lm.id.clone(),
            kind: lm.kind,
            in_channels: lm.in_channels,
            out_channels: lm.out_channels,
            kernel: lm.kernel,
            stride: lm.stride,
            out_spatial: lm.out_spatial,
            weights,
            bias,
            activation: lm.activation,
            prunable_out: lm.prunable_out,
        });
    }

    let graph = ModelGraph {
        layers,
        input_shape: manifest.input_shape,
        num_classes: manifest.num_classes,
    };

    // Chain breaks get their dedicated error; anything else surfaces as the
    // first diagnostic.
    let mut prev_out = graph.input_shape[0];
    let mut prev_id = String::from("<input>");
    for layer in &graph.layers {
        if layer.in_channels != prev_out {
            return Err(Error::ChainBroken {
                prev: prev_id,
                next: layer.id.clone(),
                out: prev_out,
                expected: layer.in_channels,
            });
        }
        prev_out = layer.out_channels;
        prev_id = layer.id.clone();
    }
    let diags = validate_graph(&graph);
    if let Some(first) = diags.first() {
        return Err(Error::MalformedManifest(first.to_string()));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{fixture_redundant_model, FixtureSpec};

    fn small_graph() -> ModelGraph {
        let (graph, _) = fixture_redundant_model(&FixtureSpec {
            widths: vec![6, 8],
            redundancy: crate::rate::Rate::parse_decimal("0.5").unwrap(),
            seed: 3,
            samples: 16,
            ..FixtureSpec::default()
        })
        .unwrap();
        graph
    }

    #[test]
    fn valid_fixture_has_no_diagnostics() {
        assert!(validate_graph(&small_graph()).is_empty());
    }

    #[test]
    fn nan_weight_names_the_layer() {
        let mut g = small_graph();
        g.layers[1].weights.data[0] = f32::NAN;
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].layer.as_deref(), Some(g.layers[1].id.as_str()));
    }

    #[test]
    fn final_dense_mismatch_is_diagnosed() {
        let mut g = small_graph();
        g.num_classes += 1;
        let diags = validate_graph(&g);
        assert!(diags.iter().any(|d| d.message.contains("num_classes")));
    }

    #[test]
    fn chain_break_is_diagnosed() {
        let mut g = small_graph();
        g.layers[1].in_channels += 2;
        let diags = validate_graph(&g);
        assert!(!diags.is_empty());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&g, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert!(g.bits_eq(&back));
    }

    #[test]
    fn truncated_blob_is_shape_mismatch() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&g, &path).unwrap();
        let blob = dir.path().join("model.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        match load_model(&path) {
            Err(Error::ShapeMismatch { .. }) => {}
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn channel_mismatch_is_chain_broken() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&g, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
        // Also stretch weights_len so the shape check passes and the chain
        // check is what trips.
        let layer = &mut manifest["layers"][1];
        let in_ch = layer["in_channels"].as_u64().unwrap();
        layer["in_channels"] = serde_json::json!(in_ch + 2);
        let out = layer["out_channels"].as_u64().unwrap();
        let k = layer["kernel"].as_u64().unwrap();
        layer["weights_len"] = serde_json::json!(out * (in_ch + 2) * k * k);
        std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_model(&path) {
            Err(Error::ChainBroken { .. }) | Err(Error::ShapeMismatch { .. }) => {}
            other => panic!("expected chain/shape failure, got {other:?}"),
        }
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let g = small_graph();
        match save_model(&g, Path::new("/nonexistent-dir/model.json")) {
            Err(Error::IoFailure { .. }) => {}
            other => panic!("expected IoFailure, got {other:?}"),
        }
    }
}
