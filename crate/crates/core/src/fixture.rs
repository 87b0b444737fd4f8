//! Deterministic fixture models with planted redundancy.
//!
//! Each prunable layer gets a fraction `r` of duplicate output channels:
//! 0.01-scaled copies of real rows whose downstream input slices are zeroed.
//! Duplicates therefore score strictly lowest under L1 and removing them
//! does not change any logit, so the best pruning decisions are known by
//! construction. The paired dataset is self-labeled through the unpruned
//! graph (accuracy 1.0) with a margin filter so labels stay stable under
//! small perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Activation, LayerKind, LayerNode, ModelGraph};
use crate::rate::Rate;
use crate::reward::{forward, LabeledDataset, SplitTag};
use crate::tensor::TensorBlob;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    /// Output channels of each Conv2D layer, in order.
    pub widths: Vec<usize>,
    /// Fraction of duplicate channels planted per prunable layer, in [0, 1).
    pub redundancy: Rate,
    pub seed: u64,
    pub input_channels: usize,
    pub num_classes: usize,
    /// Paired dataset size.
    pub samples: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            widths: vec![8, 16, 16],
            redundancy: Rate::zero(),
            seed: 0,
            input_channels: 3,
            num_classes: 10,
            samples: 256,
        }
    }
}

const DUPLICATE_SCALE: f32 = 0.01;

/// How many duplicates a layer of width `w` receives.
pub fn planted_duplicates(width: usize, redundancy: &Rate) -> usize {
    redundancy.floor_mul(width as u64).max(0) as usize
}

/// Indices of the planted duplicate channels of a layer of width `w`
/// (they occupy the tail of the channel range).
pub fn duplicate_indices(width: usize, redundancy: &Rate) -> Vec<usize> {
    let d = planted_duplicates(width, redundancy);
    (width - d..width).collect()
}

fn validate_spec(spec: &FixtureSpec) -> Result<()> {
    if spec.widths.is_empty() {
        return Err(Error::InvalidSpec("widths must be non-empty".into()));
    }
    if spec.widths.iter().any(|&w| w == 0) {
        return Err(Error::InvalidSpec("widths must be positive".into()));
    }
    if spec.redundancy.is_negative() || &spec.redundancy >= &Rate::one() {
        return Err(Error::InvalidSpec(format!(
            "redundancy must lie in [0, 1), got {}",
            spec.redundancy.to_f64()
        )));
    }
    if spec.input_channels == 0 {
        return Err(Error::InvalidSpec("input_channels must be positive".into()));
    }
    if spec.num_classes < 2 {
        return Err(Error::InvalidSpec("num_classes must be at least 2".into()));
    }
    if spec.samples == 0 {
        return Err(Error::InvalidSpec("samples must be positive".into()));
    }
    Ok(())
}

/// L1 target for real channel `j` of `n_real`: graded from 1.0 down to 0.4
/// so low-rank real channels are genuinely low-impact.
fn l1_target(base: f64, j: usize, n_real: usize) -> f64 {
    let t = if n_real <= 1 {
        0.0
    } else {
        j as f64 / (n_real - 1) as f64
    };
    base * (1.0 - 0.6 * t)
}

/// Samples a weight row, zeroes the columns belonging to upstream
/// duplicates, and rescales it to an exact L1 target.
fn sample_row(
    rng: &mut ChaCha12Rng,
    in_channels: usize,
    patch: usize,
    upstream_dupes: &[usize],
    target_l1: f64,
) -> Vec<f32> {
    let mut row = vec![0.0f32; in_channels * patch];
    loop {
        for (i, slot) in row.iter_mut().enumerate() {
            let ic = i / patch;
            if upstream_dupes.binary_search(&ic).is_ok() {
                *slot = 0.0;
            } else {
                let v: f64 = StandardNormal.sample(rng);
                *slot = v as f32;
            }
        }
        let l1: f64 = row.iter().map(|w| w.abs() as f64).sum();
        if l1 > 1e-6 {
            let scale = (target_l1 / l1) as f32;
            for w in &mut row {
                *w *= scale;
            }
            return row;
        }
        // astronomically unlikely; resample deterministically
    }
}

/// Builds the planted-redundancy model and its paired self-labeled dataset.
pub fn fixture_redundant_model(spec: &FixtureSpec) -> Result<(ModelGraph, LabeledDataset)> {
    validate_spec(spec)?;
    let n_convs = spec.widths.len();
    let input_spatial = 4 * n_convs - 1;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);

    let mut layers = Vec::with_capacity(n_convs + 1);
    let mut in_channels = spec.input_channels;
    let mut upstream_dupes: Vec<usize> = Vec::new();
    let mut spatial = input_spatial;

    for (l, &width) in spec.widths.iter().enumerate() {
        let kernel = 3usize;
        let stride = if l == 0 { 2 } else { 1 };
        let out_spatial = (spatial - kernel) / stride + 1;
        let patch = kernel * kernel;
        let d = planted_duplicates(width, &spec.redundancy);
        let n_real = width - d;
        let base = ((in_channels * patch) as f64).sqrt();

        let mut weight_rows: Vec<Vec<f32>> = Vec::with_capacity(width);
        let mut bias = Vec::with_capacity(width);
        for j in 0..n_real {
            weight_rows.push(sample_row(
                &mut rng,
                in_channels,
                patch,
                &upstream_dupes,
                l1_target(base, j, n_real),
            ));
            bias.push(rng.random_range(-0.05f32..0.05f32));
        }
        for j in 0..d {
            let src = j % n_real.max(1);
            weight_rows.push(
                weight_rows[src]
                    .iter()
                    .map(|w| w * DUPLICATE_SCALE)
                    .collect(),
            );
            bias.push(bias[src] * DUPLICATE_SCALE);
        }

        layers.push(LayerNode {
            id: format!("conv{l}"),
            kind: LayerKind::Conv2D,
            in_channels,
            out_channels: width,
            kernel,
            stride,
            out_spatial,
            weights: TensorBlob::new(
                vec![width, in_channels, kernel, kernel],
                weight_rows.into_iter().flatten().collect(),
            ),
            bias: TensorBlob::new(vec![width], bias),
            activation: Activation::ReLU,
            prunable_out: true,
        });
        upstream_dupes = duplicate_indices(width, &spec.redundancy);
        in_channels = width;
        spatial = out_spatial;
    }
    debug_assert_eq!(spatial, 1);

    // Final classifier: never output-pruned.
    let base = (in_channels as f64).sqrt();
    let mut weight_rows: Vec<Vec<f32>> = Vec::with_capacity(spec.num_classes);
    let mut bias = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        weight_rows.push(sample_row(&mut rng, in_channels, 1, &upstream_dupes, base));
        bias.push(rng.random_range(-0.05f32..0.05f32));
    }
    layers.push(LayerNode {
        id: "fc".into(),
        kind: LayerKind::Dense,
        in_channels,
        out_channels: spec.num_classes,
        kernel: 1,
        stride: 1,
        out_spatial: 1,
        weights: TensorBlob::new(
            vec![spec.num_classes, in_channels],
            weight_rows.into_iter().flatten().collect(),
        ),
        bias: TensorBlob::new(vec![spec.num_classes], bias),
        activation: Activation::Identity,
        prunable_out: false,
    });

    let graph = ModelGraph {
        layers,
        input_shape: [spec.input_channels, input_spatial, input_spatial],
        num_classes: spec.num_classes,
    };
    debug_assert!(graph.is_valid(), "{:?}", crate::model::validate_graph(&graph));

    let dataset = build_dataset(&graph, spec)?;
    Ok((graph, dataset))
}

/// Self-labels random inputs through the graph, keeping the highest-margin
/// candidates so labels stay stable under small logit perturbations.
fn build_dataset(graph: &ModelGraph, spec: &FixtureSpec) -> Result<LabeledDataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let sample_len: usize = graph.input_shape.iter().product();
    let pool = spec.samples * 4;

    let mut candidates: Vec<(usize, Vec<f32>, usize, f64)> = Vec::with_capacity(pool);
    for idx in 0..pool {
        let input: Vec<f32> = (0..sample_len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as f32
            })
            .collect();
        let logits = forward(graph, &input)?;
        let label = crate::reward::argmax(&logits);
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let margin = sorted[0] - sorted[1];
        candidates.push((idx, input, label, margin));
    }
    candidates.sort_by(|a, b| b.3.total_cmp(&a.3).then_with(|| a.0.cmp(&b.0)));
    candidates.truncate(spec.samples);
    candidates.sort_by_key(|c| c.0);

    Ok(LabeledDataset {
        inputs: candidates.iter().map(|c| c.1.clone()).collect(),
        labels: candidates.iter().map(|c| c.2).collect(),
        input_shape: graph.input_shape,
        num_classes: graph.num_classes,
        split: SplitTag::Validation,
    })
}
