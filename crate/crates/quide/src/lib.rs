//! Efficiency scoring for quantized neural networks.
//!
//! The crate bundles everything needed to run bit-width experiments end to
//! end on a small CNN:
//!
//! - [`metrics`] — the intelligence-index family (`I`, accuracy-gated `I'`,
//!   `ACP`, `ALS`), viability thresholds, rankings, and threshold ablations.
//! - [`model`] — a minimal CPU tensor engine, the four-layer SimpleCNN,
//!   a deterministic Adam trainer, and a versioned weight file format.
//! - [`quant`] — simulated post-training quantization: symmetric weight
//!   grids, affine activation grids, calibration, mixed-precision configs.
//! - [`bench`] — a warmup-then-median latency harness.
//! - [`data`] — IDX dataset ingestion, calibration sampling, synthetic
//!   datasets for self-contained runs.
//! - [`search`] — a genetic algorithm over per-layer bit-widths driven by
//!   the gated index as fitness, plus an exhaustive oracle.
//! - [`cli`] — experiment commands, run records, report emission, and
//!   verification against published reference tables.

pub mod bench;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod search;
