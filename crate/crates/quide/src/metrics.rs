//! The intelligence-index metric family.
//!
//! Every score here is a pure function of an evaluated configuration's
//! compression ratio `C`, accuracy `P` (a fraction in `[0,1]`), and latency
//! `T` in milliseconds:
//!
//! ```text
//! U   = C * P                                  (spatial utility / ACP)
//! I   = C * P / log2(T + 1)                    (intelligence index)
//! I'  = C * max(P - P_thresh, 0) / log2(T + 1) (accuracy-gated index)
//! ALS = P / log2(T + 1)                        (accuracy per log-latency)
//! ```
//!
//! The viability floor is `P_thresh = max(1/K, P_fp - delta)` for a task
//! with `K` classes, full-precision accuracy `P_fp`, and tolerance `delta`.
//!
//! All arithmetic is in `f64`. Accuracy is canonically a fraction; scaling
//! `P` by 100 scales `I` and `I'` by exactly 100, which is how tables
//! reported in percent units are reconciled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from metric computation on out-of-domain inputs.
#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("accuracy must lie in [0,1], got {0}")]
    AccuracyOutOfRange(f64),
    #[error("compression ratio must be positive, got {0}")]
    NonPositiveCompression(f64),
    #[error("latency must be positive milliseconds, got {0}")]
    NonPositiveLatency(f64),
    #[error("threshold must lie in [0,1), got {0}")]
    ThresholdOutOfRange(f64),
    #[error("class count must be nonzero")]
    ZeroClasses,
    #[error("delta must lie in [0,1], got {0}")]
    DeltaOutOfRange(f64),
    #[error("cannot rank an empty configuration list")]
    EmptyRanking,
    #[error("ranking by the gated index requires a threshold")]
    MissingThreshold,
}

/// One evaluated configuration: its bit-width label plus raw `(P, C, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    /// Configuration tag, e.g. `"8"` or `"8-8-8-4"`.
    pub bits_label: String,
    /// Top-1 accuracy as a fraction in `[0,1]`.
    pub accuracy_p: f64,
    /// Memory compression ratio; `1.0` for the full-precision anchor.
    pub compression_c: f64,
    /// Median inference latency per batch, milliseconds.
    pub latency_t_ms: f64,
}

impl MetricPoint {
    pub fn new(
        bits_label: impl Into<String>,
        accuracy_p: f64,
        compression_c: f64,
        latency_t_ms: f64,
    ) -> Result<Self, MetricError> {
        if !(0.0..=1.0).contains(&accuracy_p) || !accuracy_p.is_finite() {
            return Err(MetricError::AccuracyOutOfRange(accuracy_p));
        }
        if compression_c <= 0.0 || !compression_c.is_finite() {
            return Err(MetricError::NonPositiveCompression(compression_c));
        }
        if latency_t_ms <= 0.0 || !latency_t_ms.is_finite() {
            return Err(MetricError::NonPositiveLatency(latency_t_ms));
        }
        Ok(Self {
            bits_label: bits_label.into(),
            accuracy_p,
            compression_c,
            latency_t_ms,
        })
    }
}

/// Inputs of the two-component viability rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    /// Number of classes `K`; `1/K` is the random-chance floor.
    pub num_classes_k: u32,
    /// Full-precision baseline accuracy, fraction in `[0,1]`.
    pub fp_accuracy: f64,
    /// Tolerated accuracy drop below the baseline, fraction in `[0,1]`.
    pub delta: f64,
}

impl ThresholdSpec {
    pub fn new(num_classes_k: u32, fp_accuracy: f64, delta: f64) -> Result<Self, MetricError> {
        if num_classes_k == 0 {
            return Err(MetricError::ZeroClasses);
        }
        if !(0.0..=1.0).contains(&fp_accuracy) {
            return Err(MetricError::AccuracyOutOfRange(fp_accuracy));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(MetricError::DeltaOutOfRange(delta));
        }
        Ok(Self {
            num_classes_k,
            fp_accuracy,
            delta,
        })
    }
}

/// All scores for a single configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub point: MetricPoint,
    pub spatial_utility_u: f64,
    pub index_i: f64,
    pub index_i_prime: f64,
    pub acp: f64,
    pub als: f64,
}

impl MetricReport {
    /// Compute every metric for `point` under the given viability threshold.
    pub fn compute(point: MetricPoint, thresh: f64) -> Result<Self, MetricError> {
        let spatial_utility_u = spatial_utility(point.compression_c, point.accuracy_p)?;
        let index_i = intelligence_index(&point)?;
        let index_i_prime = refined_index(&point, thresh)?;
        let acp = acp(&point)?;
        let als = als(&point)?;
        Ok(Self {
            point,
            spatial_utility_u,
            index_i,
            index_i_prime,
            acp,
            als,
        })
    }
}

/// Metric selector for rankings and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Raw intelligence index `I`.
    Index,
    /// Accuracy-gated index `I'`.
    RefinedIndex,
    /// Accuracy-compression product `C*P`.
    Acp,
    /// Accuracy per log-latency `P / log2(T+1)`.
    Als,
}

/// Spatial utility `C * P`: predictive payload per unit of memory footprint.
pub fn spatial_utility(c: f64, p: f64) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(MetricError::AccuracyOutOfRange(p));
    }
    if c <= 0.0 || !c.is_finite() {
        return Err(MetricError::NonPositiveCompression(c));
    }
    Ok(c * p)
}

/// Temporal penalty `log2(T + 1)`, strictly increasing and concave.
///
/// `T = 0` is rejected rather than mapped through: the index would divide
/// by zero there, and no measured latency is ever exactly zero.
pub fn latency_penalty(t_ms: f64) -> Result<f64, MetricError> {
    if t_ms <= 0.0 || !t_ms.is_finite() {
        return Err(MetricError::NonPositiveLatency(t_ms));
    }
    Ok((t_ms + 1.0).log2())
}

/// Intelligence index `I = C * P / log2(T + 1)`. Higher is better.
pub fn intelligence_index(point: &MetricPoint) -> Result<f64, MetricError> {
    let u = spatial_utility(point.compression_c, point.accuracy_p)?;
    Ok(u / latency_penalty(point.latency_t_ms)?)
}

/// Viability floor `max(1/K, P_fp - delta)`.
pub fn resolve_threshold(spec: &ThresholdSpec) -> Result<f64, MetricError> {
    if spec.num_classes_k == 0 {
        return Err(MetricError::ZeroClasses);
    }
    let chance = 1.0 / f64::from(spec.num_classes_k);
    Ok(chance.max(spec.fp_accuracy - spec.delta))
}

/// Accuracy-gated index `I' = C * max(P - thresh, 0) / log2(T + 1)`.
///
/// Exactly zero whenever `P <= thresh`, removing non-viable configurations
/// from consideration no matter how aggressive their compression.
pub fn refined_index(point: &MetricPoint, thresh: f64) -> Result<f64, MetricError> {
    if !(0.0..1.0).contains(&thresh) {
        return Err(MetricError::ThresholdOutOfRange(thresh));
    }
    if !(0.0..=1.0).contains(&point.accuracy_p) || !point.accuracy_p.is_finite() {
        return Err(MetricError::AccuracyOutOfRange(point.accuracy_p));
    }
    if point.compression_c <= 0.0 || !point.compression_c.is_finite() {
        return Err(MetricError::NonPositiveCompression(point.compression_c));
    }
    let margin = (point.accuracy_p - thresh).max(0.0);
    Ok(point.compression_c * margin / latency_penalty(point.latency_t_ms)?)
}

/// Accuracy-compression product baseline; identical to [`spatial_utility`],
/// exposed under its metric name.
pub fn acp(point: &MetricPoint) -> Result<f64, MetricError> {
    spatial_utility(point.compression_c, point.accuracy_p)
}

/// Accuracy-per-log-latency baseline `P / log2(T + 1)`.
pub fn als(point: &MetricPoint) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&point.accuracy_p) || !point.accuracy_p.is_finite() {
        return Err(MetricError::AccuracyOutOfRange(point.accuracy_p));
    }
    Ok(point.accuracy_p / latency_penalty(point.latency_t_ms)?)
}

fn metric_value(point: &MetricPoint, metric: MetricKind, thresh: Option<f64>) -> Result<f64, MetricError> {
    match metric {
        MetricKind::Index => intelligence_index(point),
        MetricKind::RefinedIndex => {
            let thresh = thresh.ok_or(MetricError::MissingThreshold)?;
            refined_index(point, thresh)
        }
        MetricKind::Acp => acp(point),
        MetricKind::Als => als(point),
    }
}

/// Mean bit-width parsed from a `"b1-b2-..."` label, used to break ties in
/// favor of the higher-precision configuration. Unparseable labels sort
/// below parseable ones.
fn label_mean_bits(label: &str) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for part in label.split('-') {
        sum += part.trim().parse::<f64>().ok()?;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Rank labelled scores descending; rank 1 is the highest score. Ties go to
/// the higher mean bit-width.
pub fn rank_scores(scored: &[(String, f64)]) -> Result<Vec<(String, usize)>, MetricError> {
    if scored.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .1
            .total_cmp(&scored[a].1)
            .then_with(|| {
                let ba = label_mean_bits(&scored[a].0).unwrap_or(f64::NEG_INFINITY);
                let bb = label_mean_bits(&scored[b].0).unwrap_or(f64::NEG_INFINITY);
                bb.total_cmp(&ba)
            })
            .then_with(|| scored[a].0.cmp(&scored[b].0))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, idx)| (scored[idx].0.clone(), rank + 1))
        .collect())
}

/// Rank configurations by the selected metric, rank 1 = best.
///
/// `thresh` is required for [`MetricKind::RefinedIndex`] and ignored
/// otherwise.
pub fn rank_configs(
    points: &[MetricPoint],
    metric: MetricKind,
    thresh: Option<f64>,
) -> Result<Vec<(String, usize)>, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    let scored = points
        .iter()
        .map(|p| Ok((p.bits_label.clone(), metric_value(p, metric, thresh)?)))
        .collect::<Result<Vec<_>, MetricError>>()?;
    rank_scores(&scored)
}

/// One row of a threshold ablation: the gated-index landscape at one delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub delta: f64,
    pub resolved_threshold: f64,
    pub argmax_bits_label: String,
    pub peak_i_prime: f64,
}

/// Sweep `delta` over a grid, recomputing the gated index for every point
/// and recording which configuration peaks. Emits plot-ready rows.
pub fn threshold_ablation(
    points: &[MetricPoint],
    spec: &ThresholdSpec,
    delta_grid: &[f64],
) -> Result<Vec<AblationRow>, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    if delta_grid.is_empty() {
        return Err(MetricError::DeltaOutOfRange(f64::NAN));
    }
    let mut rows = Vec::with_capacity(delta_grid.len());
    for &delta in delta_grid {
        let spec_at = ThresholdSpec::new(spec.num_classes_k, spec.fp_accuracy, delta)?;
        let thresh = resolve_threshold(&spec_at)?;
        let mut best: Option<(&MetricPoint, f64)> = None;
        for point in points {
            let value = refined_index(point, thresh)?;
            let better = match best {
                None => true,
                Some((bp, bv)) => {
                    value > bv
                        || (value == bv
                            && label_mean_bits(&point.bits_label).unwrap_or(f64::NEG_INFINITY)
                                > label_mean_bits(&bp.bits_label).unwrap_or(f64::NEG_INFINITY))
                }
            };
            if better {
                best = Some((point, value));
            }
        }
        let (best_point, peak) = best.expect("nonempty points");
        rows.push(AblationRow {
            delta,
            resolved_threshold: thresh,
            argmax_bits_label: best_point.bits_label.clone(),
            peak_i_prime: peak,
        });
    }
    Ok(rows)
}

/// Round half away from zero to `digits` decimal places, the convention for
/// table output.
pub fn round_half_away(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (value * scale).round() / scale
}

/// Second-order estimate of `mean(1 / log2(T+1))` over per-seed latencies
/// with mean `t_mean` and standard deviation `t_std`.
///
/// Indices aggregated seed-by-seed differ from an index of column means
/// because `1/log2(T+1)` is convex in `T`; the delta-method term
/// `g(mu) + g''(mu) * sigma^2 / 2` recovers the seed-averaged value from
/// the published summary statistics.
pub fn seed_averaged_inverse_penalty(t_mean: f64, t_std: f64) -> Result<f64, MetricError> {
    let penalty = latency_penalty(t_mean)?;
    if t_std < 0.0 || !t_std.is_finite() {
        return Err(MetricError::NonPositiveLatency(t_std));
    }
    let ln2 = std::f64::consts::LN_2;
    let l = penalty;
    let l1 = 1.0 / ((t_mean + 1.0) * ln2);
    let l2 = -1.0 / ((t_mean + 1.0).powi(2) * ln2);
    // g = 1/L  =>  g'' = (2 L'^2 - L L'') / L^3
    let g2 = (2.0 * l1 * l1 - l * l2) / l.powi(3);
    Ok(1.0 / l + 0.5 * g2 * t_std * t_std)
}
