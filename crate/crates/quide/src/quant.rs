//! Simulated (fake) post-training quantization.
//!
//! Weights get per-tensor symmetric grids (`qmax = 2^(b-1) - 1` on both
//! sides); activations get per-tensor affine grids with a zero point,
//! calibrated from running min/max over a calibration subset. All
//! computation stays in f32 over quantize-dequantize values; there are no
//! integer kernels, so quantized models are *not* faster — the simulation
//! reproduces accuracy behavior, not speedups. Rounding is half away from
//! zero throughout. 32-bit layers pass through untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{
    run_forward_hooked, ActHook, ForwardModel, ModelError, NetworkDef, Tensor, WeightStore,
};

/// Bit-widths a layer may be stored at; 32 means pass-through.
pub const SUPPORTED_BITS: [u8; 5] = [2, 4, 8, 16, 32];

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("unsupported bit-width {0}; expected one of 2, 4, 8, 16, 32")]
    UnsupportedBits(u8),
    #[error("config assigns {got} bit-widths but the network has {expected} quantizable layers")]
    ConfigLength { expected: usize, got: usize },
    #[error("uniform compression is undefined for the heterogeneous config {0}")]
    HeterogeneousUniform(String),
    #[error("size-weighted compression requires per-layer parameter counts")]
    MissingParamCounts,
    #[error("empty quantization config")]
    EmptyConfig,
    #[error("cannot parse bit-width config {input:?}: {detail}")]
    ParseConfig { input: String, detail: String },
    #[error("missing calibration stats for quantizable layer {0}")]
    MissingStats(usize),
    #[error("calibration range for layer {layer} is invalid: min {min} > max {max}")]
    InvalidRange { layer: usize, min: f32, max: f32 },
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Weight quantization scheme. Only the symmetric grid is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Symmetric,
}

/// Activation quantization scheme. Only the affine grid is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationScheme {
    #[default]
    Affine,
}

/// Per-layer bit-width assignment, one entry per quantizable layer in
/// network order. Serializes to the text form `"b1-b2-...-bL"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantConfig {
    pub per_layer_bits: Vec<u8>,
    #[serde(default)]
    pub weight_scheme: WeightScheme,
    #[serde(default)]
    pub activation_scheme: ActivationScheme,
}

impl QuantConfig {
    pub fn new(per_layer_bits: Vec<u8>) -> Result<Self, QuantError> {
        if per_layer_bits.is_empty() {
            return Err(QuantError::EmptyConfig);
        }
        for &b in &per_layer_bits {
            if !SUPPORTED_BITS.contains(&b) {
                return Err(QuantError::UnsupportedBits(b));
            }
        }
        Ok(Self {
            per_layer_bits,
            weight_scheme: WeightScheme::Symmetric,
            activation_scheme: ActivationScheme::Affine,
        })
    }

    /// The same bit-width for every quantizable layer.
    pub fn uniform(bits: u8, layers: usize) -> Result<Self, QuantError> {
        Self::new(vec![bits; layers])
    }

    pub fn is_uniform(&self) -> bool {
        self.per_layer_bits.windows(2).all(|w| w[0] == w[1])
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.per_layer_bits.iter().map(|b| b.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl FromStr for QuantConfig {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .split('-')
            .map(|part| {
                part.trim().parse::<u8>().map_err(|e| QuantError::ParseConfig {
                    input: s.to_string(),
                    detail: format!("{part:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bits)
    }
}

/// How a mixed-precision config's compression ratio is accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMode {
    /// `32 / b`; only defined when all layers share one bit-width.
    Uniform,
    /// `32 / mean(per-layer bits)`, the search algorithm's accounting.
    Geometric,
    /// `32 / (parameter-weighted mean bits)`, for honest size reporting.
    SizeWeighted,
}

/// Compression ratio of a config under the chosen accounting.
/// `param_counts` is required for [`CompressionMode::SizeWeighted`].
pub fn compression_ratio(
    config: &QuantConfig,
    mode: CompressionMode,
    param_counts: Option<&[usize]>,
) -> Result<f64, QuantError> {
    if config.per_layer_bits.is_empty() {
        return Err(QuantError::EmptyConfig);
    }
    match mode {
        CompressionMode::Uniform => {
            if !config.is_uniform() {
                return Err(QuantError::HeterogeneousUniform(config.label()));
            }
            Ok(32.0 / f64::from(config.per_layer_bits[0]))
        }
        CompressionMode::Geometric => {
            let mean = config.per_layer_bits.iter().map(|&b| f64::from(b)).sum::<f64>()
                / config.per_layer_bits.len() as f64;
            Ok(32.0 / mean)
        }
        CompressionMode::SizeWeighted => {
            let counts = param_counts.ok_or(QuantError::MissingParamCounts)?;
            if counts.len() != config.per_layer_bits.len() {
                return Err(QuantError::ConfigLength {
                    expected: config.per_layer_bits.len(),
                    got: counts.len(),
                });
            }
            let total: f64 = counts.iter().map(|&c| c as f64).sum();
            let weighted: f64 = config
                .per_layer_bits
                .iter()
                .zip(counts)
                .map(|(&b, &c)| f64::from(b) * c as f64)
                .sum();
            Ok(32.0 * total / weighted)
        }
    }
}

fn check_quant_bits(bits: u8) -> Result<(), QuantError> {
    if matches!(bits, 2 | 4 | 8 | 16) {
        Ok(())
    } else {
        Err(QuantError::UnsupportedBits(bits))
    }
}

/// Symmetric per-tensor weight quantization.
///
/// `scale = max|w| / (2^(b-1) - 1)`, values are rounded half away from
/// zero and clamped to `[-qmax, qmax]`. An all-zero tensor degenerates to
/// scale 0 with an all-zero grid.
pub fn quantize_weights_symmetric(w: &Tensor, bits: u8) -> Result<(Vec<i32>, f32), QuantError> {
    check_quant_bits(bits)?;
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let max_abs = w.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok((vec![0; w.data.len()], 0.0));
    }
    // grid values are anchored to the stored f32 scale; the ratio is taken
    // in f64 so the half-away-from-zero rule is exact
    let scale = (f64::from(max_abs) / qmax) as f32;
    let q: Vec<i32> = w
        .data
        .iter()
        .map(|&v| (f64::from(v) / f64::from(scale)).round().clamp(-qmax, qmax) as i32)
        .collect();
    Ok((q, scale))
}

/// Reconstruct the fake-quantized tensor `q * scale`.
pub fn dequantize_weights(q: &[i32], scale: f32, shape: Vec<usize>) -> Tensor {
    let data: Vec<f32> = q.iter().map(|&v| v as f32 * scale).collect();
    Tensor::from_raw(shape, data)
}

/// Affine activation quantization parameters for a calibrated range.
/// The scale is kept in f64 so grid ratios round exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActQuantParams {
    pub bits: u8,
    pub scale: f64,
    pub zero_point: i32,
    /// Degenerate ranges (min == max) reproduce the constant instead.
    pub constant: Option<f32>,
}

impl ActQuantParams {
    pub fn from_range(min: f32, max: f32, bits: u8) -> Result<Self, QuantError> {
        check_quant_bits(bits)?;
        if min > max {
            return Err(QuantError::InvalidRange { layer: usize::MAX, min, max });
        }
        let levels = ((1u64 << bits) - 1) as f64;
        if min == max {
            return Ok(Self { bits, scale: 0.0, zero_point: 0, constant: Some(min) });
        }
        let scale = (f64::from(max) - f64::from(min)) / levels;
        let zero_point = (-f64::from(min) / scale).round().clamp(0.0, levels) as i32;
        Ok(Self { bits, scale, zero_point, constant: None })
    }

    /// Fake-quantize a slice in place, rounding half away from zero.
    pub fn apply(&self, x: &mut [f32]) {
        if let Some(c) = self.constant {
            x.fill(c);
            return;
        }
        let levels = ((1u64 << self.bits) - 1) as f64;
        let zp = f64::from(self.zero_point);
        let inv = 1.0 / self.scale;
        for v in x.iter_mut() {
            let q = (f64::from(*v) * inv).round() + zp;
            *v = ((q.clamp(0.0, levels) - zp) * self.scale) as f32;
        }
    }
}

/// Affine fake quantization of a tensor against a calibrated `(min, max)`.
pub fn quantize_activations_affine(
    x: &Tensor,
    range: (f32, f32),
    bits: u8,
) -> Result<Tensor, QuantError> {
    let params = ActQuantParams::from_range(range.0, range.1, bits)?;
    let mut out = x.clone();
    params.apply(&mut out.data);
    Ok(out)
}

/// Observed activation range at one quantizable layer's tap point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActRange {
    pub min: f32,
    pub max: f32,
}

/// Per-layer activation ranges gathered from a calibration subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    /// Keyed by quantizable layer index.
    pub ranges: BTreeMap<usize, ActRange>,
    pub sample_count: usize,
}

/// Run the full-precision model over the calibration set, tracking the
/// running min/max of activations at every tap point.
pub fn calibrate(
    net: &NetworkDef,
    weights: &WeightStore,
    calib_set: &Dataset,
) -> Result<CalibrationStats, QuantError> {
    if calib_set.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    let mut ranges: BTreeMap<usize, ActRange> = BTreeMap::new();
    let mut observe = |layer: usize, values: &[f32]| {
        let entry = ranges.entry(layer).or_insert(ActRange {
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
        });
        for &v in values {
            entry.min = entry.min.min(v);
            entry.max = entry.max.max(v);
        }
    };
    let batch_size = 64usize;
    let mut start = 0;
    while start < calib_set.len() {
        let count = batch_size.min(calib_set.len() - start);
        let batch = calib_set.batch(start, count);
        run_forward_hooked(net, weights, &batch, &mut ActHook::Observe(&mut observe))?;
        start += count;
    }
    Ok(CalibrationStats {
        ranges,
        sample_count: calib_set.len(),
    })
}

/// A network with fake-quantized weights and calibrated activation grids.
///
/// Immutable after construction; forward passes insert activation fake
/// quantization at each quantizable layer's tap point (except 32-bit
/// pass-through layers, which stay bit-identical to the FP model).
pub struct QuantizedModel {
    pub net: NetworkDef,
    pub weights: WeightStore,
    pub act_params: BTreeMap<usize, ActQuantParams>,
    pub config: QuantConfig,
}

/// Fake-quantize weights per layer and bind calibrated activation grids.
///
/// `stats` must cover every layer quantized below 32 bits. Biases stay in
/// full precision.
pub fn apply_quantization(
    net: &NetworkDef,
    weights: &WeightStore,
    config: &QuantConfig,
    stats: &CalibrationStats,
) -> Result<QuantizedModel, QuantError> {
    let quantizable = net.quantizable_layers();
    if config.per_layer_bits.len() != quantizable.len() {
        return Err(QuantError::ConfigLength {
            expected: quantizable.len(),
            got: config.per_layer_bits.len(),
        });
    }
    weights.validate_against(net)?;

    let mut q_weights = weights.clone();
    let mut act_params = BTreeMap::new();
    for (&layer, &bits) in quantizable.iter().zip(&config.per_layer_bits) {
        if bits == 32 {
            continue;
        }
        let params = q_weights.entries.get_mut(&layer).expect("validated store");
        let (q, scale) = quantize_weights_symmetric(&params.weight, bits)?;
        params.weight = dequantize_weights(&q, scale, params.weight.shape.clone());

        let range = stats
            .ranges
            .get(&layer)
            .copied()
            .ok_or(QuantError::MissingStats(layer))?;
        if range.min > range.max {
            return Err(QuantError::InvalidRange {
                layer,
                min: range.min,
                max: range.max,
            });
        }
        act_params.insert(layer, ActQuantParams::from_range(range.min, range.max, bits)?);
    }
    Ok(QuantizedModel {
        net: net.clone(),
        weights: q_weights,
        act_params,
        config: config.clone(),
    })
}

impl QuantizedModel {
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, QuantError> {
        let transform = |layer: usize, values: &mut [f32]| {
            if let Some(params) = self.act_params.get(&layer) {
                params.apply(values);
            }
        };
        run_forward_hooked(
            &self.net,
            &self.weights,
            batch,
            &mut ActHook::Transform(&transform),
        )
        .map_err(QuantError::from)
    }
}

impl ForwardModel for QuantizedModel {
    fn forward_batch(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let transform = |layer: usize, values: &mut [f32]| {
            if let Some(params) = self.act_params.get(&layer) {
                params.apply(values);
            }
        };
        run_forward_hooked(
            &self.net,
            &self.weights,
            batch,
            &mut ActHook::Transform(&transform),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_blobs, Split};
    use crate::model::{forward, NetworkDef, WeightStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_two_bit_hand_values() {
        let w = Tensor::new(vec![3], vec![-1.0, 0.5, 0.25]).unwrap();
        let (q, scale) = quantize_weights_symmetric(&w, 2).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(q, vec![-1, 1, 0]); // round(0.5) is 1 half away from zero
        let dq = dequantize_weights(&q, scale, vec![3]);
        assert_eq!(dq.data, vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn all_zero_weights_degenerate() {
        let w = Tensor::zeros(vec![8]);
        for bits in [2, 4, 8, 16] {
            let (q, scale) = quantize_weights_symmetric(&w, bits).unwrap();
            assert_eq!(scale, 0.0);
            assert!(q.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn rejects_unsupported_bits() {
        let w = Tensor::zeros(vec![4]);
        assert!(matches!(
            quantize_weights_symmetric(&w, 3),
            Err(QuantError::UnsupportedBits(3))
        ));
        assert!(matches!(
            quantize_weights_symmetric(&w, 32),
            Err(QuantError::UnsupportedBits(32))
        ));
    }

    #[test]
    fn reconstruction_error_bounded_by_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bits in [2u8, 4, 8, 16] {
            for _ in 0..50 {
                let data: Vec<f32> = (0..128).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
                let w = Tensor::new(vec![128], data.clone()).unwrap();
                let (q, scale) = quantize_weights_symmetric(&w, bits).unwrap();
                let dq = dequantize_weights(&q, scale, vec![128]);
                // the f32 grid multiply costs up to qmax ulps beyond the
                // ideal half step
                let bound = scale / 2.0 + scale * 5e-3;
                for (a, b) in data.iter().zip(&dq.data) {
                    assert!((a - b).abs() <= bound, "bits {bits}: |{a} - {b}| > {bound}");
                }
            }
        }
    }

    #[test]
    fn sixteen_bit_bound_uses_qmax_32767() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> = (0..256).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        let w = Tensor::new(vec![256], data.clone()).unwrap();
        let (q, scale) = quantize_weights_symmetric(&w, 16).unwrap();
        let max_abs = data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        assert!((f64::from(scale) - f64::from(max_abs) / 32767.0).abs() < 1e-10);
        let dq = dequantize_weights(&q, scale, vec![256]);
        for (a, b) in data.iter().zip(&dq.data) {
            assert!((a - b).abs() <= scale / 2.0 + scale * 5e-3);
        }
    }

    #[test]
    fn affine_eight_bit_hand_values() {
        let x = Tensor::new(vec![3], vec![0.0, 0.5, 1.0]).unwrap();
        let out = quantize_activations_affine(&x, (0.0, 1.0), 8).unwrap();
        assert!((out.data[0] - 0.0).abs() < 1e-7);
        // round(127.5...) = 128 -> 128/255 = 0.50196...
        assert!((out.data[1] - 128.0 / 255.0).abs() < 1e-6);
        assert!((out.data[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn affine_rounds_half_away_from_zero() {
        // scale exactly 1.0: 126.5 must round up, not to even
        let x = Tensor::new(vec![2], vec![126.5, 127.5]).unwrap();
        let out = quantize_activations_affine(&x, (0.0, 255.0), 8).unwrap();
        assert_eq!(out.data, vec![127.0, 128.0]);
    }

    #[test]
    fn affine_degenerate_range() {
        let x = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let out = quantize_activations_affine(&x, (0.0, 0.0), 8).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        let out = quantize_activations_affine(&x, (0.7, 0.7), 4).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn affine_error_bounded_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for bits in [2u8, 4, 8, 16] {
            let data: Vec<f32> = (0..256).map(|_| rng.random::<f32>() * 3.0 - 1.0).collect();
            let min = data.iter().cloned().fold(f32::INFINITY, f32::min);
            let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let x = Tensor::new(vec![256], data.clone()).unwrap();
            let out = quantize_activations_affine(&x, (min, max), bits).unwrap();
            let scale = (max - min) / ((1u64 << bits) - 1) as f32;
            // zero-point rounding can add up to half a step
            let bound = scale + scale * 1e-4;
            for (a, b) in data.iter().zip(&out.data) {
                assert!((a - b).abs() <= bound, "bits {bits}: |{a}-{b}| > {bound}");
            }
        }
    }

    #[test]
    fn compression_modes() {
        let uniform8 = QuantConfig::uniform(8, 4).unwrap();
        assert_eq!(
            compression_ratio(&uniform8, CompressionMode::Uniform, None).unwrap(),
            4.0
        );
        let mixed: QuantConfig = "8-8-8-4".parse().unwrap();
        assert!(matches!(
            compression_ratio(&mixed, CompressionMode::Uniform, None),
            Err(QuantError::HeterogeneousUniform(_))
        ));
        let c = compression_ratio(&mixed, CompressionMode::Geometric, None).unwrap();
        assert!((c - 32.0 / 7.0).abs() < 1e-12);
        assert!((crate::metrics::round_half_away(c, 3) - 4.571).abs() < 1e-12);
        let all32 = QuantConfig::uniform(32, 4).unwrap();
        assert_eq!(
            compression_ratio(&all32, CompressionMode::Geometric, None).unwrap(),
            1.0
        );
        // size weighting leans toward the big layer's bits
        let counts = vec![100, 100, 100, 700];
        let sw = compression_ratio(&mixed, CompressionMode::SizeWeighted, Some(&counts)).unwrap();
        assert!((sw - 32.0 / ((8.0 * 300.0 + 4.0 * 700.0) / 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg: QuantConfig = "8-8-8-4".parse().unwrap();
        assert_eq!(cfg.per_layer_bits, vec![8, 8, 8, 4]);
        assert_eq!(cfg.to_string(), "8-8-8-4");
        assert!("8-8-x".parse::<QuantConfig>().is_err());
        assert!("8-8-5".parse::<QuantConfig>().is_err());
    }

    fn calibrated_fixture() -> (NetworkDef, WeightStore, CalibrationStats, Dataset) {
        let net = NetworkDef::simple_cnn((1, 8, 8), 10);
        let weights = WeightStore::init(&net, 4);
        let ds = synth_gaussian_blobs(10, 40, (1, 8, 8), 1.5, 7).unwrap();
        let stats = calibrate(&net, &weights, &ds).unwrap();
        (net, weights, stats, ds)
    }

    use crate::data::Dataset;

    #[test]
    fn calibration_covers_all_taps_and_relu_floors() {
        let (net, _, stats, ds) = calibrated_fixture();
        assert_eq!(stats.sample_count, ds.len());
        let quantizable = net.quantizable_layers();
        assert_eq!(stats.ranges.len(), quantizable.len());
        // taps after relu observe non-negative activations
        for tap in net.activation_taps() {
            if tap.insert_after != tap.quantizable_layer {
                let r = stats.ranges[&tap.quantizable_layer];
                assert!(r.min >= 0.0, "post-relu min should be >= 0, got {}", r.min);
            }
        }
    }

    #[test]
    fn calibration_single_sample_equals_extrema() {
        let (net, weights, _, ds) = calibrated_fixture();
        let one = ds.take(1, Split::Calibration).unwrap();
        let stats = calibrate(&net, &weights, &one).unwrap();
        let again = calibrate(&net, &weights, &one).unwrap();
        assert_eq!(stats, again);
        assert_eq!(stats.sample_count, 1);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_ranges() {
        let net = NetworkDef::simple_cnn((1, 8, 8), 10);
        let mut weights = WeightStore::init(&net, 0);
        for p in weights.entries.values_mut() {
            p.bias.data.fill(0.0);
        }
        let images = Tensor::zeros(vec![4, 1, 8, 8]);
        let ds = Dataset::new(images, vec![0, 1, 2, 3], 10, Split::Calibration).unwrap();
        let stats = calibrate(&net, &weights, &ds).unwrap();
        for r in stats.ranges.values() {
            assert_eq!(r.min, 0.0);
            assert_eq!(r.max, 0.0);
        }
    }

    #[test]
    fn all_32_config_is_bit_identical_to_fp() {
        let (net, weights, stats, ds) = calibrated_fixture();
        let config = QuantConfig::uniform(32, 4).unwrap();
        let model = apply_quantization(&net, &weights, &config, &stats).unwrap();
        let batch = ds.batch(0, 8);
        let fp = forward(&net, &weights, &batch).unwrap();
        let q = model.forward(&batch).unwrap();
        assert_eq!(fp.data, q.data);
    }

    #[test]
    fn mixed_config_assigns_bits_in_layer_order() {
        let (net, weights, stats, _) = calibrated_fixture();
        let config: QuantConfig = "8-8-8-4".parse().unwrap();
        let model = apply_quantization(&net, &weights, &config, &stats).unwrap();
        let layers = net.quantizable_layers();
        assert_eq!(model.act_params[&layers[0]].bits, 8);
        assert_eq!(model.act_params[&layers[1]].bits, 8);
        assert_eq!(model.act_params[&layers[2]].bits, 8);
        assert_eq!(model.act_params[&layers[3]].bits, 4);
    }

    #[test]
    fn config_length_mismatch_rejected() {
        let (net, weights, stats, _) = calibrated_fixture();
        let config = QuantConfig::new(vec![8, 8]).unwrap();
        assert!(matches!(
            apply_quantization(&net, &weights, &config, &stats),
            Err(QuantError::ConfigLength { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn monotone_fidelity_across_bit_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let data: Vec<f32> = (0..256).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            let w = Tensor::new(vec![256], data.clone()).unwrap();
            let mut prev = f32::INFINITY;
            for bits in [2u8, 4, 8, 16] {
                let (q, scale) = quantize_weights_symmetric(&w, bits).unwrap();
                let dq = dequantize_weights(&q, scale, vec![256]);
                let err = data
                    .iter()
                    .zip(&dq.data)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                assert!(err <= prev, "max error grew from {prev} to {err} at {bits} bits");
                prev = err;
            }
        }
    }
}
