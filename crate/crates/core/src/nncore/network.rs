//! Declarative network descriptions, their trained state, and the full
//! forward/backward passes over the layer stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::layers;
use crate::nncore::rng::derive_rng;
use crate::nncore::tensor::{Scalar, Tensor};

/// One layer of the stack. Convolutions are valid (no padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    MaxPool {
        kernel: (usize, usize),
        stride: usize,
    },
    FullyConnected {
        out_features: usize,
    },
    Relu,
    Softmax,
}

/// Declarative description of a classifier network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input shape as (channels, height, width).
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub n_classes: usize,
}

/// Shape of the data flowing between layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowShape {
    Map { c: usize, h: usize, w: usize },
    Vector { len: usize },
}

impl FlowShape {
    pub fn numel(&self) -> usize {
        match *self {
            FlowShape::Map { c, h, w } => c * h * w,
            FlowShape::Vector { len } => len,
        }
    }
}

impl NetworkSpec {
    /// Propagate shapes through every layer, verifying that kernels fit,
    /// softmax appears only as the final layer, and the final vector is
    /// n_classes wide. Returns the per-layer output shapes.
    pub fn propagate_shapes(&self) -> Result<Vec<FlowShape>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::dimension(
                "input",
                format!("input shape extents must be >= 1, got {:?}", self.input_shape),
            ));
        }
        let mut cur = FlowShape::Map { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel: (kh, kw),
                    stride,
                } => {
                    let FlowShape::Map { h, w, .. } = cur else {
                        return Err(Error::dimension(
                            "layer",
                            format!("layer {i}: conv requires a feature map input"),
                        ));
                    };
                    if stride == 0 || out_channels == 0 {
                        return Err(Error::dimension(
                            "stride",
                            format!("layer {i}: stride and out_channels must be >= 1"),
                        ));
                    }
                    if kh > h || kw > w {
                        return Err(Error::dimension(
                            "kernel",
                            format!("layer {i}: kernel {kh}x{kw} does not fit input {h}x{w}"),
                        ));
                    }
                    FlowShape::Map {
                        c: out_channels,
                        h: (h - kh) / stride + 1,
                        w: (w - kw) / stride + 1,
                    }
                }
                LayerSpec::MaxPool {
                    kernel: (kh, kw),
                    stride,
                } => {
                    let FlowShape::Map { c, h, w } = cur else {
                        return Err(Error::dimension(
                            "layer",
                            format!("layer {i}: max-pool requires a feature map input"),
                        ));
                    };
                    if stride == 0 {
                        return Err(Error::dimension(
                            "stride",
                            format!("layer {i}: stride must be >= 1"),
                        ));
                    }
                    if kh > h || kw > w {
                        return Err(Error::dimension(
                            "kernel",
                            format!("layer {i}: pool {kh}x{kw} does not fit input {h}x{w}"),
                        ));
                    }
                    FlowShape::Map {
                        c,
                        h: (h - kh) / stride + 1,
                        w: (w - kw) / stride + 1,
                    }
                }
                LayerSpec::FullyConnected { out_features } => {
                    if out_features == 0 {
                        return Err(Error::dimension(
                            "features",
                            format!("layer {i}: out_features must be >= 1"),
                        ));
                    }
                    FlowShape::Vector { len: out_features }
                }
                LayerSpec::Relu => cur,
                LayerSpec::Softmax => {
                    if i != last {
                        return Err(Error::dimension(
                            "layer",
                            format!("layer {i}: softmax may appear only as the final layer"),
                        ));
                    }
                    cur
                }
            };
            out.push(cur.clone());
        }
        match out.last() {
            Some(shape) if shape.numel() == self.n_classes => {}
            Some(shape) => {
                return Err(Error::dimension(
                    "classes",
                    format!(
                        "network emits {} values but n_classes is {}",
                        shape.numel(),
                        self.n_classes
                    ),
                ))
            }
            None => {
                return Err(Error::dimension("layer", "network has no layers"));
            }
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::dimension(
                "layer",
                "final layer must be softmax",
            ));
        }
        Ok(out)
    }

    /// Input feature count of each learnable layer, in layer order.
    fn learnable_fan_in(&self) -> Result<Vec<Option<(usize, usize)>>> {
        let shapes = self.propagate_shapes()?;
        let (c0, h0, w0) = self.input_shape;
        let mut prev = FlowShape::Map {
            c: c0,
            h: h0,
            w: w0,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel: (kh, kw),
                    ..
                } => {
                    let FlowShape::Map { c, .. } = prev else {
                        unreachable!("validated by propagate_shapes")
                    };
                    Some((c * kh * kw, out_channels))
                }
                LayerSpec::FullyConnected { out_features } => {
                    Some((prev.numel(), out_features))
                }
                _ => None,
            });
            prev = shapes[i].clone();
        }
        Ok(out)
    }
}

/// Weights and bias of one learnable layer (also reused for gradient and
/// momentum buffers, which share the same shapes).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Trained parameters plus SGD momentum buffers for one `NetworkSpec`.
/// Entries are `None` for layers without parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<T = f32> {
    pub params: Vec<Option<LayerParams<T>>>,
    pub velocity: Vec<Option<LayerParams<T>>>,
    pub rng_seed: u64,
}

impl<T: Scalar> NetworkState<T> {
    /// He-uniform initialization (limit sqrt(6 / fan_in)), biases zero,
    /// one derived rng stream per layer.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let fan = spec.learnable_fan_in()?;
        let (c0, h0, w0) = spec.input_shape;
        let mut prev = FlowShape::Map {
            c: c0,
            h: h0,
            w: w0,
        };
        let shapes = spec.propagate_shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut velocity = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let slot = match (*layer, fan[i]) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel: (kh, kw),
                        ..
                    },
                    Some((fan_in, _)),
                ) => {
                    let FlowShape::Map { c, .. } = prev else {
                        unreachable!()
                    };
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let mut rng = derive_rng(seed, &[0x11, i as u64]);
                    let weights = Tensor::from_fn(&[out_channels, c, kh, kw], |_| {
                        T::from_f64(rng.random_range(-limit..limit))
                    })?;
                    Some(LayerParams {
                        weights,
                        bias: Tensor::zeros(&[out_channels])?,
                    })
                }
                (LayerSpec::FullyConnected { out_features }, Some((fan_in, _))) => {
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let mut rng = derive_rng(seed, &[0x11, i as u64]);
                    let weights = Tensor::from_fn(&[out_features, fan_in], |_| {
                        T::from_f64(rng.random_range(-limit..limit))
                    })?;
                    Some(LayerParams {
                        weights,
                        bias: Tensor::zeros(&[out_features])?,
                    })
                }
                _ => None,
            };
            velocity.push(slot.as_ref().map(|p| LayerParams {
                weights: Tensor::zeros(p.weights.shape()).expect("zeroed clone"),
                bias: Tensor::zeros(p.bias.shape()).expect("zeroed clone"),
            }));
            params.push(slot);
            prev = shapes[i].clone();
        }
        Ok(NetworkState {
            params,
            velocity,
            rng_seed: seed,
        })
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct ForwardCache<T> {
    /// Input to each layer, in layer order (index 0 is the network input).
    pub inputs: Vec<Tensor<T>>,
    /// Pool argmax indices for max-pool layers.
    pub pool_argmax: Vec<Option<Vec<u32>>>,
    /// Softmax output.
    pub probs: Tensor<T>,
}

fn batched(input: &Tensor<impl Scalar>, spec: &NetworkSpec) -> Result<()> {
    let (c, h, w) = spec.input_shape;
    if input.shape().len() != 4 || input.shape()[1..] != [c, h, w] {
        return Err(Error::dimension(
            "input",
            format!(
                "expected batch of shape (N, {c}, {h}, {w}), got {:?}",
                input.shape()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn forward_cached<T: Scalar>(
    state: &NetworkState<T>,
    spec: &NetworkSpec,
    batch: &Tensor<T>,
) -> Result<ForwardCache<T>> {
    batched(batch, spec)?;
    let n = batch.shape()[0];
    let mut inputs = Vec::with_capacity(spec.layers.len());
    let mut pool_argmax = vec![None; spec.layers.len()];
    let mut cur = batch.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        inputs.push(cur.clone());
        cur = match *layer {
            LayerSpec::Conv { stride, .. } => {
                let p = state.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {i} has no parameters")))?;
                layers::conv_forward(&cur, &p.weights, &p.bias, stride)?
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (out, idx) = layers::maxpool_forward(&cur, kernel, stride)?;
                pool_argmax[i] = Some(idx);
                out
            }
            LayerSpec::FullyConnected { .. } => {
                let p = state.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {i} has no parameters")))?;
                let flat = cur.reshaped(&[n, inputs[i].len() / n])?;
                layers::fc_forward(&flat, &p.weights, &p.bias)?
            }
            LayerSpec::Relu => layers::relu(&cur),
            LayerSpec::Softmax => layers::softmax(&cur.reshaped(&[n, spec.n_classes])?)?,
        };
    }
    Ok(ForwardCache {
        inputs,
        pool_argmax,
        probs: cur,
    })
}

/// Backward pass from the fused softmax + cross-entropy gradient. Returns
/// the unnormalized loss sum over the batch and per-layer parameter
/// gradients scaled by `1 / divisor`.
pub(crate) fn backward<T: Scalar>(
    state: &NetworkState<T>,
    spec: &NetworkSpec,
    cache: &ForwardCache<T>,
    targets: &[usize],
    divisor: usize,
) -> Result<(T, Vec<Option<LayerParams<T>>>)> {
    let (loss_sum, mut grad) = layers::cross_entropy_parts(&cache.probs, targets, divisor)?;
    let mut grads: Vec<Option<LayerParams<T>>> = vec![None; spec.layers.len()];
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let input = &cache.inputs[i];
        grad = match *layer {
            // softmax gradient is fused into the cross-entropy gradient
            LayerSpec::Softmax => grad,
            LayerSpec::Relu => layers::relu_backward(&grad, input)?,
            LayerSpec::MaxPool { .. } => {
                let idx = cache.pool_argmax[i]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("missing pool cache at layer {i}")))?;
                layers::maxpool_backward(&grad, idx, input.shape())?
            }
            LayerSpec::FullyConnected { .. } => {
                let p = state.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {i} has no parameters")))?;
                let n = input.shape()[0];
                let flat = input.clone().reshaped(&[n, input.len() / n])?;
                let (gi, gw, gb) = layers::fc_backward(&grad, &flat, &p.weights)?;
                grads[i] = Some(LayerParams {
                    weights: gw,
                    bias: gb,
                });
                gi.reshaped(input.shape())?
            }
            LayerSpec::Conv { stride, .. } => {
                let p = state.params[i]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {i} has no parameters")))?;
                let (gi, gw, gb) = layers::conv_backward(&grad, input, &p.weights, stride)?;
                grads[i] = Some(LayerParams {
                    weights: gw,
                    bias: gb,
                });
                gi
            }
        };
    }
    Ok((loss_sum, grads))
}

/// Run the network on a batch and return per-sample class probabilities
/// of shape (N, n_classes).
pub fn predict<T: Scalar>(
    state: &NetworkState<T>,
    spec: &NetworkSpec,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(forward_cached(state, spec, batch)?.probs)
}

/// The k highest-scoring classes in descending score order; ties break
/// toward the lowest class index.
pub fn topk<T: Scalar>(probs: &[T], k: usize) -> Vec<(usize, T)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| (i, probs[i]))
        .collect()
}
