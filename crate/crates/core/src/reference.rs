//! Brute-force reference implementations.
//!
//! Deliberately naive: MAC counts come from literally walking the loop nest
//! and counting multiplies, and the forward pass re-derives every index from
//! scratch on a nested representation. Tests and benches compare the
//! production paths against these; keep them slow and obvious.

use crate::error::{Error, Result};
use crate::model::{Activation, LayerKind, ModelGraph};

/// MACs of a valid convolution, counted one multiply at a time.
pub fn count_conv_macs(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    in_spatial: usize,
) -> u64 {
    let mut count = 0u64;
    if in_spatial < kernel {
        return 0;
    }
    for _oc in 0..out_channels {
        let mut oy = 0;
        while oy * stride + kernel <= in_spatial {
            let mut ox = 0;
            while ox * stride + kernel <= in_spatial {
                for _ic in 0..in_channels {
                    for _ky in 0..kernel {
                        for _kx in 0..kernel {
                            count += 1;
                        }
                    }
                }
                ox += 1;
            }
            oy += 1;
        }
    }
    count
}

/// MACs of a dense layer, counted the same way.
pub fn count_dense_macs(in_features: usize, out_features: usize) -> u64 {
    let mut count = 0u64;
    for _o in 0..out_features {
        for _i in 0..in_features {
            count += 1;
        }
    }
    count
}

/// Whole-graph MAC count, tracking the spatial extent layer by layer.
pub fn count_graph_macs(graph: &ModelGraph) -> u64 {
    let mut spatial = graph.input_shape[1];
    let mut total = 0u64;
    for layer in &graph.layers {
        match layer.kind {
            LayerKind::Conv2D => {
                total += count_conv_macs(
                    layer.in_channels,
                    layer.out_channels,
                    layer.kernel,
                    layer.stride,
                    spatial,
                );
                spatial = layer.out_spatial;
            }
            LayerKind::Dense => {
                total += count_dense_macs(layer.in_channels, layer.out_channels);
                spatial = 1;
            }
        }
    }
    total
}

/// Element count of every weight and bias tensor, walked one entry at a time.
pub fn count_graph_params(graph: &ModelGraph) -> u64 {
    let mut total = 0u64;
    for layer in &graph.layers {
        for _ in &layer.weights.data {
            total += 1;
        }
        for _ in &layer.bias.data {
            total += 1;
        }
    }
    total
}

/// Reference forward pass on a channels-of-rows nested representation.
pub fn naive_forward(graph: &ModelGraph, input: &[f32]) -> Result<Vec<f64>> {
    let [c, h, w] = graph.input_shape;
    if input.len() != c * h * w {
        return Err(Error::ShapeError(format!(
            "reference input has {} elements, expected {}",
            input.len(),
            c * h * w
        )));
    }
    // [channel][y][x]
    let mut act: Vec<Vec<Vec<f64>>> = (0..c)
        .map(|ic| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| input[ic * h * w + y * w + x] as f64)
                        .collect()
                })
                .collect()
        })
        .collect();

    for layer in &graph.layers {
        match layer.kind {
            LayerKind::Conv2D => {
                let in_sp = act[0].len();
                if in_sp < layer.kernel {
                    return Err(Error::ShapeError(format!(
                        "reference: kernel {} exceeds spatial {in_sp}",
                        layer.kernel
                    )));
                }
                let out_sp = (in_sp - layer.kernel) / layer.stride + 1;
                let mut next = vec![vec![vec![0.0f64; out_sp]; out_sp]; layer.out_channels];
                for oc in 0..layer.out_channels {
                    for oy in 0..out_sp {
                        for ox in 0..out_sp {
                            let mut sum = 0.0f64;
                            for ic in 0..layer.in_channels {
                                for ky in 0..layer.kernel {
                                    for kx in 0..layer.kernel {
                                        let iy = oy * layer.stride + ky;
                                        let ix = ox * layer.stride + kx;
                                        let widx = oc
                                            * layer.in_channels
                                            * layer.kernel
                                            * layer.kernel
                                            + ic * layer.kernel * layer.kernel
                                            + ky * layer.kernel
                                            + kx;
                                        sum += act[ic][iy][ix]
                                            * layer.weights.data[widx] as f64;
                                    }
                                }
                            }
                            sum += layer.bias.data[oc] as f64;
                            if layer.activation == Activation::ReLU && sum < 0.0 {
                                sum = 0.0;
                            }
                            next[oc][oy][ox] = sum;
                        }
                    }
                }
                act = next;
            }
            LayerKind::Dense => {
                let mut flat = Vec::new();
                for plane in &act {
                    for row in plane {
                        for v in row {
                            flat.push(*v);
                        }
                    }
                }
                if flat.len() != layer.in_channels {
                    return Err(Error::ShapeError(format!(
                        "reference: dense expects {} inputs, got {}",
                        layer.in_channels,
                        flat.len()
                    )));
                }
                let mut next = vec![vec![vec![0.0f64; 1]; 1]; layer.out_channels];
                for oc in 0..layer.out_channels {
                    let mut sum = 0.0f64;
                    for (ic, v) in flat.iter().enumerate() {
                        sum += v * layer.weights.data[oc * layer.in_channels + ic] as f64;
                    }
                    sum += layer.bias.data[oc] as f64;
                    if layer.activation == Activation::ReLU && sum < 0.0 {
                        sum = 0.0;
                    }
                    next[oc][0][0] = sum;
                }
                act = next;
            }
        }
    }
    Ok(act.into_iter().map(|plane| plane[0][0]).collect())
}

/// Central finite difference of `f` in coordinate `i` of `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], i: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += step;
    minus[i] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}
