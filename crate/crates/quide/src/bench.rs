//! Latency measurement harness.
//!
//! Warmup passes run untimed, then each timed pass is individually clocked
//! with the monotonic high-resolution clock and the median is reported.
//! Timed passes are strictly single-threaded; the harness refuses models
//! that would evaluate in parallel.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ForwardModel, ModelError, Tensor};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("timing protocol requires at least one timed pass")]
    NoTimedPasses,
    #[error("input batch dimension {got} does not match protocol batch size {expected}")]
    BatchMismatch { expected: usize, got: usize },
    #[error("a timed pass measured zero duration; clock is unusable")]
    ZeroDurationPass,
    #[error("harness is single-threaded; model requests parallelism {0}")]
    ParallelForbidden(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Measurement discipline: warmup count, timed count, batch size. The
/// aggregate is always the median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingProtocol {
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub batch_size: usize,
}

impl Default for TimingProtocol {
    fn default() -> Self {
        Self {
            warmup_iters: 100,
            timed_iters: 1000,
            batch_size: 64,
        }
    }
}

/// Host details stored with every sample so runs are auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub host: String,
    pub clock_source: String,
    pub logical_cpus: usize,
    pub os: String,
    pub timestamp_unix_ms: u128,
}

impl EnvironmentInfo {
    pub fn capture() -> Self {
        let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
            .map(|s| s.trim().to_string())
            .or_else(|_| std::env::var("HOSTNAME"))
            .unwrap_or_else(|_| "unknown".to_string());
        Self {
            host,
            clock_source: "std::time::Instant (monotonic)".to_string(),
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: format!("{} {}", std::env::consts::OS, std::env::consts::ARCH),
            timestamp_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }
}

/// Result of one measurement: per-pass durations and dispersion stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub per_pass_ms: Vec<f64>,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub environment: EnvironmentInfo,
    /// Set when the clock's resolution is coarser than 1% of the median.
    pub resolution_warning: Option<String>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Smallest observable nonzero clock step, in milliseconds.
fn estimate_clock_resolution_ms() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..64 {
        let start = Instant::now();
        let mut elapsed = start.elapsed();
        while elapsed.is_zero() {
            elapsed = start.elapsed();
        }
        best = best.min(elapsed.as_secs_f64() * 1e3);
    }
    best
}

/// Run the timing protocol against a model on a fixed input batch.
///
/// The input is deterministic; the timings are not. Warmup passes never
/// contribute to the aggregate.
pub fn measure_latency(
    model: &dyn ForwardModel,
    protocol: &TimingProtocol,
    input: &Tensor,
) -> Result<LatencySample, BenchError> {
    if protocol.timed_iters == 0 {
        return Err(BenchError::NoTimedPasses);
    }
    if model.parallelism() > 1 {
        return Err(BenchError::ParallelForbidden(model.parallelism()));
    }
    let got = input.shape.first().copied().unwrap_or(0);
    if got != protocol.batch_size {
        return Err(BenchError::BatchMismatch {
            expected: protocol.batch_size,
            got,
        });
    }

    for _ in 0..protocol.warmup_iters {
        model.forward_batch(input)?;
    }

    let mut per_pass_ms = Vec::with_capacity(protocol.timed_iters);
    for _ in 0..protocol.timed_iters {
        let start = Instant::now();
        let logits = model.forward_batch(input)?;
        let elapsed = start.elapsed();
        // keep the result alive so the pass cannot be optimized out
        std::hint::black_box(&logits);
        if elapsed.is_zero() {
            return Err(BenchError::ZeroDurationPass);
        }
        per_pass_ms.push(elapsed.as_secs_f64() * 1e3);
    }

    let mut sorted = per_pass_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = median(&sorted);
    let resolution = estimate_clock_resolution_ms();
    let resolution_warning = (resolution > 0.01 * median_ms).then(|| {
        format!("clock resolution {resolution:.6} ms exceeds 1% of median {median_ms:.6} ms")
    });

    Ok(LatencySample {
        median_ms,
        p10_ms: percentile(&sorted, 0.10),
        p90_ms: percentile(&sorted, 0.90),
        per_pass_ms,
        environment: EnvironmentInfo::capture(),
        resolution_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Busy-spins a fixed wall-clock interval per "forward".
    struct SpinModel {
        micros: u64,
        parallelism: usize,
    }

    impl ForwardModel for SpinModel {
        fn forward_batch(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
            let start = Instant::now();
            while start.elapsed().as_micros() < u128::from(self.micros) {
                std::hint::spin_loop();
            }
            Ok(Tensor::zeros(vec![batch.shape[0], 2]))
        }

        fn parallelism(&self) -> usize {
            self.parallelism
        }
    }

    fn input(batch: usize) -> Tensor {
        Tensor::zeros(vec![batch, 1, 2, 2])
    }

    #[test]
    fn single_pass_median_is_that_pass() {
        let model = SpinModel { micros: 200, parallelism: 1 };
        let protocol = TimingProtocol { warmup_iters: 0, timed_iters: 1, batch_size: 4 };
        let sample = measure_latency(&model, &protocol, &input(4)).unwrap();
        assert_eq!(sample.per_pass_ms.len(), 1);
        assert_eq!(sample.median_ms, sample.per_pass_ms[0]);
    }

    #[test]
    fn median_within_min_max_and_positive() {
        let model = SpinModel { micros: 50, parallelism: 1 };
        let protocol = TimingProtocol { warmup_iters: 2, timed_iters: 21, batch_size: 2 };
        let sample = measure_latency(&model, &protocol, &input(2)).unwrap();
        let min = sample.per_pass_ms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = sample.per_pass_ms.iter().cloned().fold(0.0, f64::max);
        assert!(sample.median_ms >= min && sample.median_ms <= max);
        assert!(sample.per_pass_ms.iter().all(|&d| d > 0.0));
        assert!(sample.p10_ms <= sample.median_ms && sample.median_ms <= sample.p90_ms);
    }

    #[test]
    fn batch_mismatch_rejected() {
        let model = SpinModel { micros: 10, parallelism: 1 };
        let protocol = TimingProtocol { warmup_iters: 0, timed_iters: 1, batch_size: 8 };
        assert!(matches!(
            measure_latency(&model, &protocol, &input(4)),
            Err(BenchError::BatchMismatch { expected: 8, got: 4 })
        ));
    }

    #[test]
    fn parallel_models_are_refused() {
        let model = SpinModel { micros: 10, parallelism: 4 };
        let protocol = TimingProtocol { warmup_iters: 0, timed_iters: 1, batch_size: 4 };
        assert!(matches!(
            measure_latency(&model, &protocol, &input(4)),
            Err(BenchError::ParallelForbidden(4))
        ));
    }

    #[test]
    fn repeat_measurements_are_stable() {
        let model = SpinModel { micros: 300, parallelism: 1 };
        let protocol = TimingProtocol { warmup_iters: 3, timed_iters: 15, batch_size: 1 };
        let a = measure_latency(&model, &protocol, &input(1)).unwrap();
        let b = measure_latency(&model, &protocol, &input(1)).unwrap();
        let rel = (a.median_ms - b.median_ms).abs() / a.median_ms.max(b.median_ms);
        assert!(rel <= 0.10, "medians differ by {rel:.3} relatively");
    }
}
