//! Channel selection and structured removal.
//!
//! Importance is the L1 norm of each output channel's weight row (bias
//! excluded). Rates discretize by flooring the keep count so the pruned
//! fraction never falls below the requested rate unless the one-channel
//! floor binds. Removal rewrites both the layer's output rows and the next
//! layer's input slices, keeping the chain invariant intact.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{io_err, LayerKind, ModelGraph};
use crate::rate::Rate;
use crate::tensor::TensorBlob;

/// Per-layer decision: the rate it was built from and the surviving output
/// channels (indices into the original layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub id: String,
    pub alpha: f64,
    pub kept: Vec<usize>,
}

/// The full action trace for one target rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub beta: f64,
    pub layers: Vec<PlanLayer>,
}

impl PruningPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::PlanMismatch(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::PlanMismatch(e.to_string()))
    }
}

/// L1 score per output channel. Bias is excluded on purpose: the criterion
/// ranks by weight magnitude only.
pub fn channel_importance(layer: &crate::model::LayerNode) -> Vec<f64> {
    let row = layer.weights.data.len() / layer.out_channels.max(1);
    (0..layer.out_channels)
        .map(|c| {
            layer.weights.data[c * row..(c + 1) * row]
                .iter()
                .map(|w| w.abs() as f64)
                .sum()
        })
        .collect()
}

/// max(1, floor((1 - alpha) * out_channels)). Flooring keeps the pruned
/// fraction at or above alpha whenever the result stays above one channel.
pub fn rate_to_keep_count(out_channels: usize, alpha: &Rate) -> usize {
    let keep_rate = &Rate::one() - alpha;
    let keep = keep_rate.floor_mul(out_channels as u64);
    keep.max(1) as usize
}

/// Indices of the `keep` highest scores, ascending. Ties keep the lower
/// index.
pub fn select_channels(scores: &[f64], keep: usize) -> Vec<usize> {
    assert!(keep <= scores.len(), "keep exceeds channel count");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

fn validate_kept(layer: &crate::model::LayerNode, kept: &[usize]) -> Result<()> {
    if kept.is_empty() {
        return Err(Error::EmptyLayer(layer.id.clone()));
    }
    if !kept.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::PlanMismatch(format!(
            "kept indices for '{}' are not strictly increasing",
            layer.id
        )));
    }
    if *kept.last().unwrap() >= layer.out_channels {
        return Err(Error::PlanMismatch(format!(
            "kept index {} out of range for '{}' with {} channels",
            kept.last().unwrap(),
            layer.id,
            layer.out_channels
        )));
    }
    if !layer.prunable_out && kept.len() != layer.out_channels {
        return Err(Error::PlanMismatch(format!(
            "layer '{}' is not prunable but the plan drops channels",
            layer.id
        )));
    }
    Ok(())
}

/// Removes output channels of `graph.layers[index]`, keeping `kept` (indices
/// into the layer's current rows), and slices the next layer's inputs to
/// match. Returns a new graph.
pub fn prune_layer_outputs(graph: &ModelGraph, index: usize, kept: &[usize]) -> Result<ModelGraph> {
    let layer = graph
        .layers
        .get(index)
        .ok_or_else(|| Error::PlanMismatch(format!("layer index {index} out of range")))?;
    validate_kept(layer, kept)?;

    let mut out = graph.clone();
    {
        let layer = &mut out.layers[index];
        let row = layer.weights.data.len() / layer.out_channels;
        let mut data = Vec::with_capacity(kept.len() * row);
        for &c in kept {
            data.extend_from_slice(&layer.weights.data[c * row..(c + 1) * row]);
        }
        let mut shape = layer.weights.shape.clone();
        shape[0] = kept.len();
        layer.weights = TensorBlob::new(shape, data);
        layer.bias = TensorBlob::new(
            vec![kept.len()],
            kept.iter().map(|&c| layer.bias.data[c]).collect(),
        );
        layer.out_channels = kept.len();
    }
    if index + 1 < out.layers.len() {
        let next = &mut out.layers[index + 1];
        match next.kind {
            LayerKind::Conv2D => {
                let k = next.kernel;
                let patch = k * k;
                let mut data = Vec::with_capacity(next.out_channels * kept.len() * patch);
                for oc in 0..next.out_channels {
                    for &ic in kept {
                        let start = (oc * next.in_channels + ic) * patch;
                        data.extend_from_slice(&next.weights.data[start..start + patch]);
                    }
                }
                next.weights =
                    TensorBlob::new(vec![next.out_channels, kept.len(), k, k], data);
            }
            LayerKind::Dense => {
                let mut data = Vec::with_capacity(next.out_channels * kept.len());
                for oc in 0..next.out_channels {
                    for &ic in kept {
                        data.push(next.weights.data[oc * next.in_channels + ic]);
                    }
                }
                next.weights = TensorBlob::new(vec![next.out_channels, kept.len()], data);
            }
        }
        next.in_channels = kept.len();
    }
    Ok(out)
}

/// Applies a full plan to the original graph: every layer keeps its `kept`
/// output rows, and input slices follow the upstream selection.
pub fn apply_plan(graph: &ModelGraph, plan: &PruningPlan) -> Result<ModelGraph> {
    if plan.layers.len() != graph.layers.len() {
        return Err(Error::PlanMismatch(format!(
            "plan has {} layers, graph has {}",
            plan.layers.len(),
            graph.layers.len()
        )));
    }
    let by_id: HashMap<&str, &PlanLayer> =
        plan.layers.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != plan.layers.len() {
        return Err(Error::PlanMismatch("plan has duplicate layer ids".into()));
    }
    let mut result = graph.clone();
    for index in 0..graph.layers.len() {
        let id = graph.layers[index].id.as_str();
        let entry = by_id
            .get(id)
            .ok_or_else(|| Error::PlanMismatch(format!("plan is missing layer '{id}'")))?;
        result = prune_layer_outputs(&result, index, &entry.kept)?;
    }
    Ok(result)
}

/// Zeroes (instead of removing) every pruned channel's weight row and bias.
/// For ReLU/Identity chains this is forward-equivalent to `apply_plan`; the
/// verify pipeline exploits that as an independent correctness check.
pub fn zero_pruned_channels(graph: &ModelGraph, plan: &PruningPlan) -> Result<ModelGraph> {
    if plan.layers.len() != graph.layers.len() {
        return Err(Error::PlanMismatch(format!(
            "plan has {} layers, graph has {}",
            plan.layers.len(),
            graph.layers.len()
        )));
    }
    let by_id: HashMap<&str, &PlanLayer> =
        plan.layers.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = graph.clone();
    for layer in &mut out.layers {
        let entry = by_id
            .get(layer.id.as_str())
            .ok_or_else(|| Error::PlanMismatch(format!("plan is missing layer '{}'", layer.id)))?;
        validate_kept(layer, &entry.kept)?;
        let keep: std::collections::HashSet<usize> = entry.kept.iter().copied().collect();
        let row = layer.weights.data.len() / layer.out_channels;
        for c in 0..layer.out_channels {
            if !keep.contains(&c) {
                layer.weights.data[c * row..(c + 1) * row].fill(0.0);
                layer.bias.data[c] = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LayerNode};

    fn dense_layer(weights: Vec<Vec<f32>>) -> LayerNode {
        let out = weights.len();
        let inp = weights[0].len();
        LayerNode {
            id: "d".into(),
            kind: LayerKind::Dense,
            in_channels: inp,
            out_channels: out,
            kernel: 1,
            stride: 1,
            out_spatial: 1,
            weights: TensorBlob::new(vec![out, inp], weights.into_iter().flatten().collect()),
            bias: TensorBlob::zeros(vec![out]),
            activation: Activation::Identity,
            prunable_out: true,
        }
    }

    #[test]
    fn importance_is_row_l1() {
        let layer = dense_layer(vec![vec![1.0, -2.0], vec![0.0, 0.5], vec![-1.0, -1.0]]);
        assert_eq!(channel_importance(&layer), vec![3.0, 0.5, 2.0]);
    }

    #[test]
    fn importance_of_zero_layer_is_zero() {
        let layer = dense_layer(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(channel_importance(&layer), vec![0.0, 0.0]);
    }

    #[test]
    fn importance_is_positively_homogeneous() {
        let layer = dense_layer(vec![vec![1.0, -2.0], vec![0.0, 0.5], vec![-1.0, -1.0]]);
        let mut scaled = layer.clone();
        for w in &mut scaled.weights.data {
            *w *= 2.0;
        }
        let a = channel_importance(&layer);
        let b = channel_importance(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        let order = |v: &[f64]| select_channels(v, v.len());
        assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn keep_count_floors() {
        let r = |s: &str| Rate::parse_decimal(s).unwrap();
        assert_eq!(rate_to_keep_count(10, &r("0.37")), 6);
        assert_eq!(rate_to_keep_count(10, &r("0")), 10);
        assert_eq!(rate_to_keep_count(4, &r("0.99")), 1);
        // exact-rational edge: (1 - 0.3) * 10 is exactly 7
        assert_eq!(rate_to_keep_count(10, &r("0.3")), 7);
    }

    #[test]
    fn selection_keeps_top_scores_with_index_ties() {
        assert_eq!(select_channels(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
        assert_eq!(select_channels(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
        assert_eq!(select_channels(&[1.0, 5.0, 2.0], 3), vec![0, 1, 2]);
    }

    #[test]
    fn identity_plan_is_a_noop() {
        let (graph, _) = crate::fixture::fixture_redundant_model(&crate::fixture::FixtureSpec {
            widths: vec![6, 8],
            redundancy: Rate::parse_decimal("0.5").unwrap(),
            seed: 11,
            samples: 8,
            ..Default::default()
        })
        .unwrap();
        let plan = PruningPlan {
            beta: 0.0,
            layers: graph
                .layers
                .iter()
                .map(|l| PlanLayer {
                    id: l.id.clone(),
                    alpha: 0.0,
                    kept: (0..l.out_channels).collect(),
                })
                .collect(),
        };
        let pruned = apply_plan(&graph, &plan).unwrap();
        assert!(graph.bits_eq(&pruned));
    }

    #[test]
    fn unknown_layer_id_is_plan_mismatch() {
        let (graph, _) = crate::fixture::fixture_redundant_model(&crate::fixture::FixtureSpec {
            widths: vec![6, 8],
            redundancy: Rate::parse_decimal("0.5").unwrap(),
            seed: 11,
            samples: 8,
            ..Default::default()
        })
        .unwrap();
        let mut plan = PruningPlan {
            beta: 0.0,
            layers: graph
                .layers
                .iter()
                .map(|l| PlanLayer {
                    id: l.id.clone(),
                    alpha: 0.0,
                    kept: (0..l.out_channels).collect(),
                })
                .collect(),
        };
        plan.layers[0].id = "nope".into();
        match apply_plan(&graph, &plan) {
            Err(Error::PlanMismatch(_)) => {}
            other => panic!("expected PlanMismatch, got {other:?}"),
        }
    }

    #[test]
    fn empty_kept_set_is_empty_layer() {
        let (graph, _) = crate::fixture::fixture_redundant_model(&crate::fixture::FixtureSpec {
            widths: vec![6, 8],
            redundancy: Rate::parse_decimal("0.5").unwrap(),
            seed: 11,
            samples: 8,
            ..Default::default()
        })
        .unwrap();
        match prune_layer_outputs(&graph, 0, &[]) {
            Err(Error::EmptyLayer(_)) => {}
            other => panic!("expected EmptyLayer, got {other:?}"),
        }
    }
}
