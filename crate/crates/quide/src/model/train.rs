//! Deterministic Adam trainer with validation-peak checkpointing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward,
};
use super::network::{evaluate_accuracy, FpModel, LayerDef, NetworkDef, WeightStore};
use super::{ModelError, Tensor};
use crate::data::{Dataset, Split};

/// Optional train-time augmentation: zero-pad random crop and horizontal
/// flip, applied per sample from the trainer's seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    pub crop_padding: usize,
    pub horizontal_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Fraction of the training set held out for epoch selection.
    pub val_fraction: f64,
    pub seed: u64,
    pub augment: Option<Augment>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 128,
            weight_decay: 1e-4,
            val_fraction: 0.1,
            seed: 0,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with peak validation accuracy.
    pub weights: WeightStore,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochStats>,
}

struct Grads {
    by_layer: BTreeMap<usize, (Vec<f32>, Vec<f32>)>,
}

impl Grads {
    fn zeros_like(weights: &WeightStore) -> Self {
        let by_layer = weights
            .entries
            .iter()
            .map(|(&i, p)| (i, (vec![0.0; p.weight.numel()], vec![0.0; p.bias.numel()])))
            .collect();
        Self { by_layer }
    }

    fn reset(&mut self) {
        for (gw, gb) in self.by_layer.values_mut() {
            gw.fill(0.0);
            gb.fill(0.0);
        }
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    moments: BTreeMap<usize, (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>)>,
}

impl Adam {
    fn new(lr: f64, weight_decay: f64, weights: &WeightStore) -> Self {
        let moments = weights
            .entries
            .iter()
            .map(|(&i, p)| {
                (
                    i,
                    (
                        vec![0.0; p.weight.numel()],
                        vec![0.0; p.weight.numel()],
                        vec![0.0; p.bias.numel()],
                        vec![0.0; p.bias.numel()],
                    ),
                )
            })
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments,
        }
    }

    fn update(&mut self, weights: &mut WeightStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, params) in weights.entries.iter_mut() {
            let (gw, gb) = &grads.by_layer[i];
            let (mw, vw, mb, vb) = self.moments.get_mut(i).expect("moment buffers");
            step_adam(
                &mut params.weight.data,
                gw,
                mw,
                vw,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
                bc1,
                bc2,
            );
            step_adam(
                &mut params.bias.data,
                gb,
                mb,
                vb,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                0.0, // biases are not decayed
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn step_adam(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..param.len() {
        let g = grad[i] as f64 + weight_decay * param[i] as f64;
        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        param[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
    }
}

/// Per-batch tape: activations at every layer boundary plus pool argmaxes.
struct Tape {
    /// `acts[0]` is the input; `acts[i+1]` the output of layer `i`.
    acts: Vec<Vec<f32>>,
    argmax: BTreeMap<usize, Vec<u32>>,
}

fn forward_tape(
    net: &NetworkDef,
    weights: &WeightStore,
    batch: &[f32],
    n: usize,
) -> Result<Tape, ModelError> {
    let chain = net.dims_chain();
    let numel = |d: (usize, usize, usize)| d.0 * d.1 * d.2;
    let mut acts: Vec<Vec<f32>> = Vec::with_capacity(net.layers.len() + 1);
    acts.push(batch.to_vec());
    let mut argmax = BTreeMap::new();

    for (i, layer) in net.layers.iter().enumerate() {
        let in_dims = chain[i];
        let out_dims = chain[i + 1];
        let in_len = numel(in_dims);
        let out_len = numel(out_dims);
        let mut out = vec![0.0f32; n * out_len];
        let input = acts.last().unwrap();
        match *layer {
            LayerDef::Conv2d { out_channels, kernel, stride, padding } => {
                let p = weights.get(i)?;
                for s in 0..n {
                    conv2d_forward(
                        &input[s * in_len..(s + 1) * in_len],
                        in_dims.0,
                        in_dims.1,
                        in_dims.2,
                        &p.weight.data,
                        &p.bias.data,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        &mut out[s * out_len..(s + 1) * out_len],
                    );
                }
            }
            LayerDef::MaxPool2d { size } => {
                let mut arg = vec![0u32; n * out_len];
                for s in 0..n {
                    maxpool_forward(
                        &input[s * in_len..(s + 1) * in_len],
                        in_dims.0,
                        in_dims.1,
                        in_dims.2,
                        size,
                        &mut out[s * out_len..(s + 1) * out_len],
                        &mut arg[s * out_len..(s + 1) * out_len],
                    );
                }
                argmax.insert(i, arg);
            }
            LayerDef::Relu => {
                for s in 0..n {
                    relu_forward(
                        &input[s * in_len..(s + 1) * in_len],
                        &mut out[s * out_len..(s + 1) * out_len],
                    );
                }
            }
            LayerDef::Flatten => out.copy_from_slice(input),
            LayerDef::FullyConnected { out_features } => {
                let p = weights.get(i)?;
                for s in 0..n {
                    fc_forward(
                        &input[s * in_len..(s + 1) * in_len],
                        &p.weight.data,
                        &p.bias.data,
                        out_features,
                        &mut out[s * out_len..(s + 1) * out_len],
                    );
                }
            }
        }
        acts.push(out);
    }
    Ok(Tape { acts, argmax })
}

/// Mean cross-entropy over the batch and its gradient on the logits.
fn softmax_cross_entropy(logits: &[f32], labels: &[u32], k: usize) -> (f64, Vec<f32>) {
    let n = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut total = 0.0f64;
    let inv_n = 1.0 / n as f32;
    for s in 0..n {
        let row = &logits[s * k..(s + 1) * k];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln() + max;
        let label = labels[s] as usize;
        total += f64::from(log_sum - row[label]);
        let grow = &mut grad[s * k..(s + 1) * k];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            grow[j] = (p - if j == label { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    (total / n as f64, grad)
}

/// Backpropagate `grad_logits` through the tape, accumulating parameter
/// gradients into `grads` and returning the gradient on the input batch.
fn backward_tape(
    net: &NetworkDef,
    weights: &WeightStore,
    tape: &Tape,
    n: usize,
    grad_logits: Vec<f32>,
    grads: &mut Grads,
) -> Result<Vec<f32>, ModelError> {
    let chain = net.dims_chain();
    let numel = |d: (usize, usize, usize)| d.0 * d.1 * d.2;
    let mut grad_out = grad_logits;

    for (i, layer) in net.layers.iter().enumerate().rev() {
        let in_dims = chain[i];
        let in_len = numel(in_dims);
        let out_len = numel(chain[i + 1]);
        let input = &tape.acts[i];
        let output = &tape.acts[i + 1];
        let mut grad_in = vec![0.0f32; n * in_len];
        match *layer {
            LayerDef::Conv2d { out_channels, kernel, stride, padding } => {
                let p = weights.get(i)?;
                let (gw, gb) = grads.by_layer.get_mut(&i).expect("grad buffers");
                for s in 0..n {
                    conv2d_backward(
                        &input[s * in_len..(s + 1) * in_len],
                        in_dims.0,
                        in_dims.1,
                        in_dims.2,
                        &p.weight.data,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        &grad_out[s * out_len..(s + 1) * out_len],
                        &mut grad_in[s * in_len..(s + 1) * in_len],
                        gw,
                        gb,
                    );
                }
            }
            LayerDef::MaxPool2d { .. } => {
                let arg = &tape.argmax[&i];
                for s in 0..n {
                    maxpool_backward(
                        &grad_out[s * out_len..(s + 1) * out_len],
                        &arg[s * out_len..(s + 1) * out_len],
                        &mut grad_in[s * in_len..(s + 1) * in_len],
                    );
                }
            }
            LayerDef::Relu => {
                for s in 0..n {
                    relu_backward(
                        &grad_out[s * out_len..(s + 1) * out_len],
                        &output[s * out_len..(s + 1) * out_len],
                        &mut grad_in[s * in_len..(s + 1) * in_len],
                    );
                }
            }
            LayerDef::Flatten => grad_in.copy_from_slice(&grad_out),
            LayerDef::FullyConnected { out_features } => {
                let p = weights.get(i)?;
                let (gw, gb) = grads.by_layer.get_mut(&i).expect("grad buffers");
                for s in 0..n {
                    fc_backward(
                        &input[s * in_len..(s + 1) * in_len],
                        &p.weight.data,
                        out_features,
                        &grad_out[s * out_len..(s + 1) * out_len],
                        &mut grad_in[s * in_len..(s + 1) * in_len],
                        gw,
                        gb,
                    );
                }
            }
        }
        grad_out = grad_in;
    }
    Ok(grad_out)
}

/// Mean batch loss and the analytic parameter/input gradients at a point.
/// Exposed for finite-difference verification.
pub fn loss_and_gradients(
    net: &NetworkDef,
    weights: &WeightStore,
    batch: &Tensor,
    labels: &[u32],
) -> Result<(f64, BTreeMap<usize, (Vec<f32>, Vec<f32>)>, Vec<f32>), ModelError> {
    let n = batch.shape[0];
    let tape = forward_tape(net, weights, &batch.data, n)?;
    let logits = tape.acts.last().unwrap();
    let (loss, grad_logits) = softmax_cross_entropy(logits, labels, net.num_classes);
    let mut grads = Grads::zeros_like(weights);
    let grad_input = backward_tape(net, weights, &tape, n, grad_logits, &mut grads)?;
    Ok((loss, grads.by_layer, grad_input))
}

fn augment_sample(
    img: &[f32],
    dims: (usize, usize, usize),
    cfg: Augment,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let (c, h, w) = dims;
    let pad = cfg.crop_padding;
    let mut out = img.to_vec();
    if pad > 0 {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let mut shifted = vec![0.0f32; out.len()];
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    shifted[(ch * h + y) * w + x] = out[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
        out = shifted;
    }
    if cfg.horizontal_flip && rng.random_bool(0.5) {
        for ch in 0..c {
            for y in 0..h {
                let row = &mut out[(ch * h + y) * w..(ch * h + y + 1) * w];
                row.reverse();
            }
        }
    }
    out
}

/// Train from scratch and return the weights of the epoch with peak
/// held-out accuracy. Fully deterministic for a given config and seed;
/// zero epochs returns the seeded initialization unchanged.
pub fn train_baseline(
    net: &NetworkDef,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.learning_rate <= 0.0 || config.batch_size == 0 {
        return Err(ModelError::InvalidHyper(
            "learning rate and batch size must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(ModelError::InvalidHyper("val_fraction must lie in [0,1)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = WeightStore::init(net, config.seed);
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            weights,
            best_epoch: 0,
            best_val_accuracy: 0.0,
            history: Vec::new(),
        });
    }

    // one seeded shuffle decides the validation split
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let n_val = ((dataset.len() as f64) * config.val_fraction).round() as usize;
    let n_val = n_val.min(dataset.len() - 1);
    let (val_idx, train_idx) = indices.split_at(n_val);
    let val_set = if n_val > 0 {
        Some(dataset.subset(val_idx, Split::Test).expect("nonempty val"))
    } else {
        None
    };
    let mut train_order: Vec<usize> = train_idx.to_vec();

    let dims = net.input_shape;
    let sample_len = dims.0 * dims.1 * dims.2;
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &weights);
    let mut grads = Grads::zeros_like(&weights);

    let mut best: Option<(usize, f64, WeightStore)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        for i in (1..train_order.len()).rev() {
            let j = rng.random_range(0..=i);
            train_order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in train_order.chunks(config.batch_size) {
            let n = chunk.len();
            let mut batch_data = Vec::with_capacity(n * sample_len);
            let mut labels = Vec::with_capacity(n);
            for &idx in chunk {
                match config.augment {
                    Some(aug) => {
                        batch_data.extend(augment_sample(dataset.image(idx), dims, aug, &mut rng))
                    }
                    None => batch_data.extend_from_slice(dataset.image(idx)),
                }
                labels.push(dataset.labels[idx]);
            }
            let tape = forward_tape(net, &weights, &batch_data, n)?;
            let logits = tape.acts.last().unwrap();
            let (loss, grad_logits) = softmax_cross_entropy(logits, &labels, net.num_classes);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss });
            }
            grads.reset();
            backward_tape(net, &weights, &tape, n, grad_logits, &mut grads)?;
            adam.update(&mut weights, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        let val_accuracy = match &val_set {
            Some(val) => evaluate_accuracy(&FpModel::new(net, &weights), val, 256)?,
            None => 0.0,
        };
        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches.max(1) as f64,
            val_accuracy,
        });
        let improved = match &best {
            None => true,
            Some((_, best_acc, _)) => val_accuracy > *best_acc,
        };
        if improved {
            best = Some((epoch, val_accuracy, weights.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, weights) =
        best.unwrap_or((config.epochs - 1, 0.0, weights));
    Ok(TrainOutcome {
        weights,
        best_epoch,
        best_val_accuracy,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_blobs;

    fn tiny_mlp(input: (usize, usize, usize), k: usize) -> NetworkDef {
        NetworkDef::new(
            vec![
                LayerDef::Flatten,
                LayerDef::FullyConnected { out_features: 16 },
                LayerDef::Relu,
                LayerDef::FullyConnected { out_features: k },
            ],
            input,
            k,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let net = tiny_mlp((1, 2, 2), 2);
        let ds = synth_gaussian_blobs(2, 20, (1, 2, 2), 2.0, 0).unwrap();
        let cfg = TrainConfig { epochs: 0, seed: 5, ..Default::default() };
        let out = train_baseline(&net, &ds, &cfg).unwrap();
        let init = WeightStore::init(&net, 5);
        assert_eq!(out.weights, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let net = tiny_mlp((1, 3, 3), 2);
        let ds = synth_gaussian_blobs(2, 160, (1, 3, 3), 6.0, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            weight_decay: 0.0,
            val_fraction: 0.2,
            seed: 1,
            ..Default::default()
        };
        let out = train_baseline(&net, &ds, &cfg).unwrap();
        let acc = evaluate_accuracy(&FpModel::new(&net, &out.weights), &ds, 64).unwrap();
        assert!(acc >= 0.99, "expected separable data to be learned, got {acc}");
    }

    #[test]
    fn augmentation_keeps_training_deterministic() {
        let net = tiny_mlp((1, 4, 4), 2);
        let ds = synth_gaussian_blobs(2, 60, (1, 4, 4), 3.0, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 6,
            augment: Some(Augment { crop_padding: 1, horizontal_flip: true }),
            ..Default::default()
        };
        let a = train_baseline(&net, &ds, &cfg).unwrap();
        let b = train_baseline(&net, &ds, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        // transforms actually change the gradient stream
        let plain = train_baseline(&net, &ds, &TrainConfig { augment: None, ..cfg }).unwrap();
        assert!(a.weights != plain.weights);
    }

    #[test]
    fn augment_shift_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        for _ in 0..50 {
            let out = augment_sample(
                &img,
                (1, 4, 4),
                Augment { crop_padding: 2, horizontal_flip: true },
                &mut rng,
            );
            assert_eq!(out.len(), 16);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let net = tiny_mlp((1, 2, 2), 2);
        let ds = synth_gaussian_blobs(2, 60, (1, 2, 2), 3.0, 2).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 9, ..Default::default() };
        let a = train_baseline(&net, &ds, &cfg).unwrap();
        let b = train_baseline(&net, &ds, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn linear_model_bias_gradient_matches_closed_form() {
        // for logits = Wx + b, dL/db is the mean of (softmax - onehot)
        let net = NetworkDef::new(
            vec![LayerDef::Flatten, LayerDef::FullyConnected { out_features: 3 }],
            (1, 1, 2),
            3,
        )
        .unwrap();
        let weights = WeightStore::init(&net, 11);
        let batch = Tensor::new(vec![2, 1, 1, 2], vec![0.4, -0.2, 0.9, 0.1]).unwrap();
        let labels = [2u32, 0];
        let (_, grads, _) = loss_and_gradients(&net, &weights, &batch, &labels).unwrap();

        let logits = crate::model::forward(&net, &weights, &batch).unwrap();
        let mut expected = [0.0f64; 3];
        for s in 0..2 {
            let row = &logits.data[s * 3..(s + 1) * 3];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..3 {
                let onehot = if labels[s] as usize == j { 1.0 } else { 0.0 };
                expected[j] += (exps[j] / sum - onehot) / 2.0;
            }
        }
        let (_, grad_bias) = &grads[&1];
        for j in 0..3 {
            assert!(
                (f64::from(grad_bias[j]) - expected[j]).abs() < 1e-6,
                "bias grad {j}: {} vs {}",
                grad_bias[j],
                expected[j]
            );
        }
    }

    #[test]
    fn softmax_gradient_sums_to_zero_per_sample() {
        let logits = vec![0.3, -0.1, 1.2, 0.0, 0.0, 0.0];
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0], 3);
        for s in 0..2 {
            let sum: f32 = grad[s * 3..(s + 1) * 3].iter().sum();
            assert!(sum.abs() < 1e-6);
        }
    }
}
