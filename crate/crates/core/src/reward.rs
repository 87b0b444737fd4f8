//! Minimal inference: forward pass, datasets, and the accuracy reward.
//!
//! Convolutions are valid cross-correlations (no padding); Dense layers are
//! matrix products on the flattened tensor, which the IR guarantees has
//! spatial extent 1 by then. Accumulation is f64 so results are insensitive
//! to summation-order differences well below the 1e-5 oracle tolerance.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{io_err, read_f32_blob, write_f32_blob, Activation, LayerKind, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    TrainProxy,
    Validation,
}

/// Inputs in [channels, height, width] row-major layout plus class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub split: SplitTag,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First `n` samples as a new dataset (reward subset configuration).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    input_shape: [usize; 3],
    num_classes: usize,
    count: usize,
    blob_file: String,
    labels: Vec<usize>,
}

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let blob_file = format!("{stem}.bin");
    let manifest = DatasetManifest {
        version: 1,
        input_shape: dataset.input_shape,
        num_classes: dataset.num_classes,
        count: dataset.len(),
        blob_file: blob_file.clone(),
        labels: dataset.labels.clone(),
    };
    let blob_path = match path.parent() {
        Some(dir) => dir.join(&blob_file),
        None => std::path::PathBuf::from(&blob_file),
    };
    write_f32_blob(
        &blob_path,
        dataset.inputs.iter().flat_map(|x| x.iter().copied()),
    )?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    if manifest.version != 1 {
        return Err(Error::MalformedManifest(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    if manifest.labels.len() != manifest.count {
        return Err(Error::MalformedManifest(format!(
            "dataset declares {} samples but carries {} labels",
            manifest.count,
            manifest.labels.len()
        )));
    }
    if let Some(bad) = manifest.labels.iter().find(|&&l| l >= manifest.num_classes) {
        return Err(Error::MalformedManifest(format!(
            "label {bad} out of range for {} classes",
            manifest.num_classes
        )));
    }
    let blob_path = match path.parent() {
        Some(dir) => dir.join(&manifest.blob_file),
        None => std::path::PathBuf::from(&manifest.blob_file),
    };
    let blob = read_f32_blob(&blob_path)?;
    let sample_len: usize = manifest.input_shape.iter().product();
    if blob.len() != sample_len * manifest.count {
        return Err(Error::ShapeMismatch {
            context: "dataset blob".into(),
            expected: sample_len * manifest.count,
            actual: blob.len(),
        });
    }
    Ok(LabeledDataset {
        inputs: blob.chunks_exact(sample_len).map(|c| c.to_vec()).collect(),
        labels: manifest.labels,
        input_shape: manifest.input_shape,
        num_classes: manifest.num_classes,
        split: SplitTag::Validation,
    })
}

/// Runs the chain on one input and returns the class logits.
pub fn forward(graph: &ModelGraph, input: &[f32]) -> Result<Vec<f64>> {
    let [c, h, w] = graph.input_shape;
    if input.len() != c * h * w {
        return Err(Error::ShapeError(format!(
            "input has {} elements, graph expects {}",
            input.len(),
            c * h * w
        )));
    }
    let mut act: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut channels = c;
    let mut spatial = h;

    for layer in &graph.layers {
        match layer.kind {
            LayerKind::Conv2D => {
                if channels != layer.in_channels {
                    return Err(Error::ShapeError(format!(
                        "layer '{}' expects {} input channels, got {channels}",
                        layer.id, layer.in_channels
                    )));
                }
                if spatial < layer.kernel {
                    return Err(Error::ShapeError(format!(
                        "layer '{}' kernel {} exceeds spatial extent {spatial}",
                        layer.id, layer.kernel
                    )));
                }
                let out_sp = (spatial - layer.kernel) / layer.stride + 1;
                if out_sp != layer.out_spatial {
                    return Err(Error::ShapeError(format!(
                        "layer '{}' declares out_spatial {}, input yields {out_sp}",
                        layer.id, layer.out_spatial
                    )));
                }
                let k = layer.kernel;
                let s = layer.stride;
                let mut next = vec![0.0f64; layer.out_channels * out_sp * out_sp];
                for oc in 0..layer.out_channels {
                    let bias = layer.bias.data[oc] as f64;
                    for oy in 0..out_sp {
                        for ox in 0..out_sp {
                            let mut acc = bias;
                            for ic in 0..layer.in_channels {
                                let plane = &act[ic * spatial * spatial..(ic + 1) * spatial * spatial];
                                for ky in 0..k {
                                    let iy = oy * s + ky;
                                    let row = &plane[iy * spatial..iy * spatial + spatial];
                                    for kx in 0..k {
                                        acc += row[ox * s + kx] as f64
                                            * layer.conv_weight(oc, ic, ky, kx) as f64;
                                    }
                                }
                            }
                            next[(oc * out_sp + oy) * out_sp + ox] = apply_activation(
                                layer.activation,
                                acc,
                            );
                        }
                    }
                }
                act = next;
                channels = layer.out_channels;
                spatial = out_sp;
            }
            LayerKind::Dense => {
                if spatial != 1 {
                    return Err(Error::ShapeError(format!(
                        "layer '{}' is Dense but input spatial extent is {spatial}",
                        layer.id
                    )));
                }
                if channels != layer.in_channels {
                    return Err(Error::ShapeError(format!(
                        "layer '{}' expects {} inputs, got {channels}",
                        layer.id, layer.in_channels
                    )));
                }
                let mut next = vec![0.0f64; layer.out_channels];
                for (oc, slot) in next.iter_mut().enumerate() {
                    let mut acc = layer.bias.data[oc] as f64;
                    for (ic, v) in act.iter().enumerate() {
                        acc += v * layer.dense_weight(oc, ic) as f64;
                    }
                    *slot = apply_activation(layer.activation, acc);
                }
                act = next;
                channels = layer.out_channels;
                spatial = 1;
            }
        }
    }
    Ok(act)
}

#[inline]
fn apply_activation(a: Activation, v: f64) -> f64 {
    match a {
        Activation::ReLU => v.max(0.0),
        Activation::Identity => v,
    }
}

/// Index of the largest logit; ties resolve to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

fn check_compatible(graph: &ModelGraph, dataset: &LabeledDataset) -> Result<()> {
    if dataset.input_shape != graph.input_shape {
        return Err(Error::ShapeError(format!(
            "dataset shape {:?} does not match graph input {:?}",
            dataset.input_shape, graph.input_shape
        )));
    }
    Ok(())
}

/// Fraction of samples whose argmax logit equals the label. Sequential path.
pub fn evaluate_accuracy_seq(graph: &ModelGraph, dataset: &LabeledDataset) -> Result<f64> {
    assert!(!dataset.is_empty(), "dataset must be non-empty");
    check_compatible(graph, dataset)?;
    let mut correct = 0u64;
    for (input, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        if argmax(&forward(graph, input)?) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Fraction of samples whose argmax logit equals the label.
///
/// With the `parallel` feature the samples are evaluated on the rayon pool;
/// the reduction is an integer count, so the result is identical to the
/// sequential path bit for bit.
#[cfg(feature = "parallel")]
pub fn evaluate_accuracy(graph: &ModelGraph, dataset: &LabeledDataset) -> Result<f64> {
    use rayon::prelude::*;
    assert!(!dataset.is_empty(), "dataset must be non-empty");
    check_compatible(graph, dataset)?;
    let correct: u64 = dataset
        .inputs
        .par_iter()
        .zip(&dataset.labels)
        .map(|(input, &label)| Ok(u64::from(argmax(&forward(graph, input)?) == label)))
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(not(feature = "parallel"))]
pub fn evaluate_accuracy(graph: &ModelGraph, dataset: &LabeledDataset) -> Result<f64> {
    evaluate_accuracy_seq(graph, dataset)
}

/// The search reward: identity on validation accuracy.
pub fn reward(accuracy: f64) -> f64 {
    accuracy
}
