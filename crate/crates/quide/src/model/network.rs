//! Network definition, parameter store, and the inference walker.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv2d_forward, fc_forward, maxpool_forward, relu_forward};
use super::{ModelError, Tensor};
use crate::data::Dataset;

/// One layer of the network. Only `Conv2d` and `FullyConnected` carry
/// parameters and are quantization targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDef {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    Flatten,
    FullyConnected {
        out_features: usize,
    },
}

impl LayerDef {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerDef::Conv2d { .. } => "conv2d",
            LayerDef::MaxPool2d { .. } => "maxpool2d",
            LayerDef::Relu => "relu",
            LayerDef::Flatten => "flatten",
            LayerDef::FullyConnected { .. } => "fully_connected",
        }
    }

    /// Whether this layer's weights and output activations are quantized.
    pub fn quantizable(&self) -> bool {
        matches!(self, LayerDef::Conv2d { .. } | LayerDef::FullyConnected { .. })
    }
}

/// `(channels, height, width)` of an activation map.
pub type Dims = (usize, usize, usize);

/// Architecture description: an ordered layer list plus the input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDef {
    pub layers: Vec<LayerDef>,
    pub input_shape: Dims,
    pub num_classes: usize,
}

/// Where a quantizable layer's activations are observed and fake-quantized:
/// after the ReLU that immediately follows it when there is one (activation
/// maps are then non-negative), otherwise directly after the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationTap {
    /// Index of the quantizable layer the tap belongs to.
    pub quantizable_layer: usize,
    /// Index of the layer after whose output the tap sits.
    pub insert_after: usize,
}

impl NetworkDef {
    pub fn new(layers: Vec<LayerDef>, input_shape: Dims, num_classes: usize) -> Result<Self, ModelError> {
        let net = Self {
            layers,
            input_shape,
            num_classes,
        };
        net.validate()?;
        Ok(net)
    }

    /// The four-layer reference CNN: two 3x3 conv stages (32 and 64
    /// filters) each followed by relu and 2x2 max pooling, then fc(128)
    /// with relu and the classifier head.
    pub fn simple_cnn(input_shape: Dims, num_classes: usize) -> Self {
        let layers = vec![
            LayerDef::Conv2d { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
            LayerDef::Relu,
            LayerDef::MaxPool2d { size: 2 },
            LayerDef::Conv2d { out_channels: 64, kernel: 3, stride: 1, padding: 1 },
            LayerDef::Relu,
            LayerDef::MaxPool2d { size: 2 },
            LayerDef::Flatten,
            LayerDef::FullyConnected { out_features: 128 },
            LayerDef::Relu,
            LayerDef::FullyConnected { out_features: num_classes },
        ];
        Self::new(layers, input_shape, num_classes).expect("reference architecture is valid")
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::EmptyNetwork);
        }
        let mut dims = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            dims = layer_output_dims(layer, dims, i)?;
        }
        let out: usize = dims.0 * dims.1 * dims.2;
        if out != self.num_classes {
            return Err(ModelError::Shape {
                layer_index: self.layers.len() - 1,
                kind: self.layers.last().unwrap().kind_name(),
                detail: format!("network outputs {out} values, expected {} classes", self.num_classes),
            });
        }
        Ok(())
    }

    /// Activation dims entering each layer, plus the final output dims.
    pub fn dims_chain(&self) -> Vec<Dims> {
        let mut chain = Vec::with_capacity(self.layers.len() + 1);
        let mut dims = self.input_shape;
        chain.push(dims);
        for (i, layer) in self.layers.iter().enumerate() {
            dims = layer_output_dims(layer, dims, i).expect("validated network");
            chain.push(dims);
        }
        chain
    }

    /// Indices of quantizable layers in order.
    pub fn quantizable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.quantizable().then_some(i))
            .collect()
    }

    /// Activation observation points for every quantizable layer.
    pub fn activation_taps(&self) -> Vec<ActivationTap> {
        self.quantizable_layers()
            .into_iter()
            .map(|qi| {
                let insert_after = match self.layers.get(qi + 1) {
                    Some(LayerDef::Relu) => qi + 1,
                    _ => qi,
                };
                ActivationTap {
                    quantizable_layer: qi,
                    insert_after,
                }
            })
            .collect()
    }

    /// Parameter count (weights + biases) of each quantizable layer.
    pub fn quantizable_param_counts(&self) -> Vec<usize> {
        let chain = self.dims_chain();
        self.quantizable_layers()
            .into_iter()
            .map(|qi| {
                let (in_c, in_h, in_w) = chain[qi];
                match &self.layers[qi] {
                    LayerDef::Conv2d { out_channels, kernel, .. } => {
                        out_channels * in_c * kernel * kernel + out_channels
                    }
                    LayerDef::FullyConnected { out_features } => {
                        out_features * (in_c * in_h * in_w) + out_features
                    }
                    _ => unreachable!("quantizable layers carry parameters"),
                }
            })
            .collect()
    }
}

fn layer_output_dims(layer: &LayerDef, dims: Dims, index: usize) -> Result<Dims, ModelError> {
    let (c, h, w) = dims;
    let err = |detail: String| ModelError::Shape {
        layer_index: index,
        kind: layer.kind_name(),
        detail,
    };
    match *layer {
        LayerDef::Conv2d { out_channels, kernel, stride, padding } => {
            if kernel == 0 || stride == 0 || out_channels == 0 {
                return Err(err("kernel, stride and filter count must be positive".into()));
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(err(format!(
                    "kernel {kernel} exceeds padded input {h}x{w} (pad {padding})"
                )));
            }
            let oh = (h + 2 * padding - kernel) / stride + 1;
            let ow = (w + 2 * padding - kernel) / stride + 1;
            Ok((out_channels, oh, ow))
        }
        LayerDef::MaxPool2d { size } => {
            if size == 0 {
                return Err(err("pool size must be positive".into()));
            }
            if h < size || w < size {
                return Err(err(format!("pool size {size} exceeds input {h}x{w}")));
            }
            Ok((c, h / size, w / size))
        }
        LayerDef::Relu => Ok(dims),
        LayerDef::Flatten => Ok((c * h * w, 1, 1)),
        LayerDef::FullyConnected { out_features } => {
            if out_features == 0 {
                return Err(err("output feature count must be positive".into()));
            }
            Ok((out_features, 1, 1))
        }
    }
}

/// Weight and bias for one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameters for every quantizable layer, keyed by layer index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightStore {
    pub entries: BTreeMap<usize, LayerParams>,
}

impl WeightStore {
    /// Seeded uniform fan-in initialization: weights drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init(net: &NetworkDef, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = net.dims_chain();
        let mut entries = BTreeMap::new();
        for qi in net.quantizable_layers() {
            let (in_c, in_h, in_w) = chain[qi];
            let (w_shape, fan_in, out_n) = match net.layers[qi] {
                LayerDef::Conv2d { out_channels, kernel, .. } => (
                    vec![out_channels, in_c, kernel, kernel],
                    in_c * kernel * kernel,
                    out_channels,
                ),
                LayerDef::FullyConnected { out_features } => {
                    let in_f = in_c * in_h * in_w;
                    (vec![out_features, in_f], in_f, out_features)
                }
                _ => unreachable!(),
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            let len: usize = w_shape.iter().product();
            let data: Vec<f32> = (0..len)
                .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
                .collect();
            entries.insert(
                qi,
                LayerParams {
                    weight: Tensor::from_raw(w_shape, data),
                    bias: Tensor::zeros(vec![out_n]),
                },
            );
        }
        Self { entries }
    }

    pub fn get(&self, layer: usize) -> Result<&LayerParams, ModelError> {
        self.entries.get(&layer).ok_or(ModelError::MissingParams(layer))
    }

    /// Check that every quantizable layer has parameters of the right shape.
    pub fn validate_against(&self, net: &NetworkDef) -> Result<(), ModelError> {
        let chain = net.dims_chain();
        for qi in net.quantizable_layers() {
            let params = self.get(qi)?;
            let (in_c, in_h, in_w) = chain[qi];
            let (expected_w, expected_b): (Vec<usize>, usize) = match net.layers[qi] {
                LayerDef::Conv2d { out_channels, kernel, .. } => {
                    (vec![out_channels, in_c, kernel, kernel], out_channels)
                }
                LayerDef::FullyConnected { out_features } => {
                    (vec![out_features, in_c * in_h * in_w], out_features)
                }
                _ => unreachable!(),
            };
            if params.weight.shape != expected_w {
                return Err(ModelError::Shape {
                    layer_index: qi,
                    kind: net.layers[qi].kind_name(),
                    detail: format!(
                        "weight shape {:?} does not match expected {:?}",
                        params.weight.shape, expected_w
                    ),
                });
            }
            if params.bias.numel() != expected_b {
                return Err(ModelError::Shape {
                    layer_index: qi,
                    kind: net.layers[qi].kind_name(),
                    detail: format!("bias length {} != {expected_b}", params.bias.numel()),
                });
            }
        }
        Ok(())
    }
}

/// Hook applied to activations at tap points during a forward pass.
pub(crate) enum ActHook<'a> {
    /// Plain inference.
    None,
    /// Observe activations (calibration). Called with the quantizable layer
    /// index and the activation slice of one sample.
    Observe(&'a mut dyn FnMut(usize, &[f32])),
    /// Rewrite activations in place (fake quantization).
    Transform(&'a dyn Fn(usize, &mut [f32])),
}

/// Walk the network for a batch, applying `hook` at every activation tap.
pub(crate) fn run_forward_hooked(
    net: &NetworkDef,
    weights: &WeightStore,
    batch: &Tensor,
    hook: &mut ActHook<'_>,
) -> Result<Tensor, ModelError> {
    if batch.shape.len() != 4 {
        return Err(ModelError::TensorShape {
            shape: batch.shape.clone(),
            expected: 4,
            got: batch.shape.len(),
        });
    }
    let n = batch.shape[0];
    let got: Dims = (batch.shape[1], batch.shape[2], batch.shape[3]);
    if got != net.input_shape {
        return Err(ModelError::Shape {
            layer_index: 0,
            kind: "input",
            detail: format!("batch dims {:?} do not match input shape {:?}", got, net.input_shape),
        });
    }
    weights.validate_against(net)?;

    let chain = net.dims_chain();
    let taps: BTreeMap<usize, usize> = net
        .activation_taps()
        .into_iter()
        .map(|t| (t.insert_after, t.quantizable_layer))
        .collect();

    let numel = |d: Dims| d.0 * d.1 * d.2;
    let mut cur: Vec<f32> = batch.data.clone();
    let mut next: Vec<f32> = Vec::new();
    let mut cur_dims = chain[0];

    for (i, layer) in net.layers.iter().enumerate() {
        let out_dims = chain[i + 1];
        let in_len = numel(cur_dims);
        let out_len = numel(out_dims);
        next.clear();
        next.resize(n * out_len, 0.0);
        match *layer {
            LayerDef::Conv2d { out_channels, kernel, stride, padding } => {
                let params = weights.get(i)?;
                for s in 0..n {
                    conv2d_forward(
                        &cur[s * in_len..(s + 1) * in_len],
                        cur_dims.0,
                        cur_dims.1,
                        cur_dims.2,
                        &params.weight.data,
                        &params.bias.data,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        &mut next[s * out_len..(s + 1) * out_len],
                    );
                }
            }
            LayerDef::MaxPool2d { size } => {
                let mut argmax = vec![0u32; out_len];
                for s in 0..n {
                    maxpool_forward(
                        &cur[s * in_len..(s + 1) * in_len],
                        cur_dims.0,
                        cur_dims.1,
                        cur_dims.2,
                        size,
                        &mut next[s * out_len..(s + 1) * out_len],
                        &mut argmax,
                    );
                }
            }
            LayerDef::Relu => {
                for s in 0..n {
                    relu_forward(
                        &cur[s * in_len..(s + 1) * in_len],
                        &mut next[s * out_len..(s + 1) * out_len],
                    );
                }
            }
            LayerDef::Flatten => {
                next.copy_from_slice(&cur);
            }
            LayerDef::FullyConnected { out_features } => {
                let params = weights.get(i)?;
                for s in 0..n {
                    fc_forward(
                        &cur[s * in_len..(s + 1) * in_len],
                        &params.weight.data,
                        &params.bias.data,
                        out_features,
                        &mut next[s * out_len..(s + 1) * out_len],
                    );
                }
            }
        }
        if let Some(&quantizable_layer) = taps.get(&i) {
            match hook {
                ActHook::None => {}
                ActHook::Observe(f) => {
                    for s in 0..n {
                        f(quantizable_layer, &next[s * out_len..(s + 1) * out_len]);
                    }
                }
                ActHook::Transform(f) => {
                    for s in 0..n {
                        f(quantizable_layer, &mut next[s * out_len..(s + 1) * out_len]);
                    }
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        cur_dims = out_dims;
    }

    Ok(Tensor::from_raw(vec![n, net.num_classes], cur))
}

/// Deterministic forward pass: logits of shape `(batch, num_classes)`.
pub fn forward(net: &NetworkDef, weights: &WeightStore, batch: &Tensor) -> Result<Tensor, ModelError> {
    run_forward_hooked(net, weights, batch, &mut ActHook::None)
}

/// Anything that can map an input batch to logits.
pub trait ForwardModel {
    fn forward_batch(&self, batch: &Tensor) -> Result<Tensor, ModelError>;

    /// Number of worker threads the model would use per forward call.
    /// The latency harness refuses anything above 1.
    fn parallelism(&self) -> usize {
        1
    }
}

/// A full-precision network plus its weights.
pub struct FpModel<'a> {
    pub net: &'a NetworkDef,
    pub weights: &'a WeightStore,
}

impl<'a> FpModel<'a> {
    pub fn new(net: &'a NetworkDef, weights: &'a WeightStore) -> Self {
        Self { net, weights }
    }
}

impl ForwardModel for FpModel<'_> {
    fn forward_batch(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        forward(self.net, self.weights, batch)
    }
}

/// Fraction of samples whose argmax logit matches the label. Argmax ties
/// resolve to the lowest class index.
pub fn evaluate_accuracy(
    model: &dyn ForwardModel,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let batch_size = batch_size.max(1);
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < dataset.len() {
        let count = batch_size.min(dataset.len() - start);
        let logits = model.forward_batch(&dataset.batch(start, count))?;
        let k = logits.shape[1];
        for s in 0..count {
            let row = &logits.data[s * k..(s + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best as u32 == dataset.labels[start + s] {
                correct += 1;
            }
        }
        start += count;
    }
    Ok(correct as f64 / dataset.len() as f64)
}
