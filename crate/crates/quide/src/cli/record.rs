//! Self-verifying run records.
//!
//! A record stores the resolved config snapshot, the raw `(P, C, T,
//! thresh)` behind every reported index, and enough environment detail to
//! audit the run. `verify` recomputes every stored index from the raw
//! inputs and rejects records that drift beyond 1e-9.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::bench::{EnvironmentInfo, LatencySample};
use crate::metrics::{self, MetricPoint};
use crate::search::SearchLog;

/// A latency sample tagged with the configuration it measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledLatency {
    pub label: String,
    pub sample: LatencySample,
}

/// One evaluated `(seed, configuration)` cell with raw inputs and every
/// derived index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub bits_label: String,
    pub accuracy_p: f64,
    pub compression_c: f64,
    pub latency_t_ms: f64,
    pub thresh: f64,
    pub spatial_utility_u: f64,
    pub index_i: f64,
    pub index_i_prime: f64,
    pub acp: f64,
    pub als: f64,
}

impl ReportRow {
    /// Compute all indices from raw inputs.
    pub fn from_raw(
        seed: u64,
        bits_label: impl Into<String>,
        accuracy_p: f64,
        compression_c: f64,
        latency_t_ms: f64,
        thresh: f64,
    ) -> Result<Self, CliError> {
        let point = MetricPoint::new(bits_label, accuracy_p, compression_c, latency_t_ms)?;
        let report = metrics::MetricReport::compute(point, thresh)?;
        Ok(Self {
            seed,
            bits_label: report.point.bits_label.clone(),
            accuracy_p,
            compression_c,
            latency_t_ms,
            thresh,
            spatial_utility_u: report.spatial_utility_u,
            index_i: report.index_i,
            index_i_prime: report.index_i_prime,
            acp: report.acp,
            als: report.als,
        })
    }
}

/// Aggregated sweep row: mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTableRow {
    pub bits_label: String,
    pub p_mean: f64,
    pub p_std: f64,
    pub c: f64,
    pub t_mean: f64,
    pub t_std: f64,
    pub i_mean: f64,
    pub i_std: f64,
    pub iprime_mean: f64,
    pub iprime_std: f64,
    /// True on the row with peak mean gated index.
    pub pareto_knee: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_test_accuracy: f64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub weight_sha256: String,
    pub weights_path: String,
}

/// A persisted experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub timestamp_unix_ms: u128,
    pub command: String,
    /// Resolved config snapshot; sufficient to re-run identically.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Class count of the evaluated task; 0 when not applicable.
    #[serde(default)]
    pub num_classes: u32,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_table: Option<Vec<SweepTableRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_log: Option<SearchLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_summary: Option<TrainSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latency_samples: Vec<LabelledLatency>,
    pub environment: EnvironmentInfo,
    pub artifacts: Vec<String>,
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

const VERIFY_TOL: f64 = 1e-9;

impl RunRecord {
    /// Recompute every stored index from the stored raw inputs; any drift
    /// beyond 1e-9 is an integrity failure.
    pub fn verify(&self) -> Result<(), CliError> {
        for (i, row) in self.rows.iter().enumerate() {
            let recomputed = ReportRow::from_raw(
                row.seed,
                row.bits_label.clone(),
                row.accuracy_p,
                row.compression_c,
                row.latency_t_ms,
                row.thresh,
            )?;
            for (field, stored, fresh) in [
                ("spatial_utility_u", row.spatial_utility_u, recomputed.spatial_utility_u),
                ("index_i", row.index_i, recomputed.index_i),
                ("index_i_prime", row.index_i_prime, recomputed.index_i_prime),
                ("acp", row.acp, recomputed.acp),
                ("als", row.als, recomputed.als),
            ] {
                if (stored - fresh).abs() > VERIFY_TOL {
                    return Err(CliError::Integrity(format!(
                        "row {i} ({}, seed {}): stored {field} = {stored} but raw inputs give {fresh}",
                        row.bits_label, row.seed
                    )));
                }
            }
        }
        Ok(())
    }

    /// Aggregate per-seed rows into the sweep table, seed-first: indices
    /// are computed per seed and then averaged. Marks the peak-gated-index
    /// row as the Pareto knee (ties prefer wider bits).
    pub fn build_sweep_table(rows: &[ReportRow], bits_order: &[String]) -> Vec<SweepTableRow> {
        let mut table: Vec<SweepTableRow> = Vec::with_capacity(bits_order.len());
        for label in bits_order {
            let cells: Vec<&ReportRow> = rows.iter().filter(|r| &r.bits_label == label).collect();
            if cells.is_empty() {
                continue;
            }
            let (p_mean, p_std) = mean_std(&cells.iter().map(|r| r.accuracy_p).collect::<Vec<_>>());
            let (t_mean, t_std) = mean_std(&cells.iter().map(|r| r.latency_t_ms).collect::<Vec<_>>());
            let (i_mean, i_std) = mean_std(&cells.iter().map(|r| r.index_i).collect::<Vec<_>>());
            let (iprime_mean, iprime_std) =
                mean_std(&cells.iter().map(|r| r.index_i_prime).collect::<Vec<_>>());
            table.push(SweepTableRow {
                bits_label: label.clone(),
                p_mean,
                p_std,
                c: cells[0].compression_c,
                t_mean,
                t_std,
                i_mean,
                i_std,
                iprime_mean,
                iprime_std,
                pareto_knee: false,
            });
        }
        if let Ok(ranks) = metrics::rank_scores(
            &table
                .iter()
                .map(|r| (r.bits_label.clone(), r.iprime_mean))
                .collect::<Vec<_>>(),
        ) {
            if let Some((knee, _)) = ranks.first() {
                for row in table.iter_mut() {
                    row.pareto_knee = &row.bits_label == knee;
                }
            }
        }
        table
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Integrity(format!("record does not serialize: {e}")))?;
        std::fs::write(path, json).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Integrity(format!("{}: invalid record: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with_rows(rows: Vec<ReportRow>) -> RunRecord {
        RunRecord {
            run_id: "test".into(),
            timestamp_unix_ms: 0,
            command: "sweep".into(),
            config: serde_json::json!({}),
            seeds: vec![0],
            num_classes: 0,
            rows,
            sweep_table: None,
            search_log: None,
            train_summary: None,
            latency_samples: vec![],
            environment: EnvironmentInfo::capture(),
            artifacts: vec![],
        }
    }

    #[test]
    fn verify_accepts_consistent_records() {
        let row = ReportRow::from_raw(0, "8", 0.79, 4.0, 1.2, 0.5).unwrap();
        record_with_rows(vec![row]).verify().unwrap();
    }

    #[test]
    fn verify_catches_single_digit_perturbation() {
        let mut row = ReportRow::from_raw(0, "8", 0.79, 4.0, 1.2, 0.5).unwrap();
        row.index_i += 0.001;
        let err = record_with_rows(vec![row]).verify().unwrap_err();
        assert!(matches!(err, CliError::Integrity(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sweep_table_aggregates_and_marks_knee() {
        let mut rows = Vec::new();
        for seed in [0u64, 1, 2] {
            rows.push(ReportRow::from_raw(seed, "8", 0.79, 4.0, 1.0 + seed as f64 * 0.1, 0.5).unwrap());
            rows.push(ReportRow::from_raw(seed, "4", 0.60, 8.0, 1.0, 0.5).unwrap());
        }
        let table = RunRecord::build_sweep_table(&rows, &["8".into(), "4".into()]);
        assert_eq!(table.len(), 2);
        assert!(table[0].pareto_knee); // 4*(0.79-0.5) > 8*(0.60-0.5)
        assert!(!table[1].pareto_knee);
        assert!(table[0].p_std.abs() < 1e-12);
        assert!(table[0].t_std > 0.0);
    }

    #[test]
    fn single_seed_stds_are_zero() {
        let rows = vec![ReportRow::from_raw(0, "8", 0.7, 4.0, 1.0, 0.5).unwrap()];
        let table = RunRecord::build_sweep_table(&rows, &["8".into()]);
        assert_eq!(table[0].p_std, 0.0);
        assert_eq!(table[0].i_std, 0.0);
    }

    #[test]
    fn mean_std_uses_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12); // sqrt(((1)+(0)+(1))/2)
    }
}
