//! Deterministic report emission: CSV, console tables, and plot-ready
//! columnar data. Output is byte-stable for a fixed record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::record::{RunRecord, SweepTableRow};
use super::CliError;
use crate::metrics::{
    rank_configs, round_half_away, threshold_ablation, MetricKind, MetricPoint, ThresholdSpec,
};

fn fmt3(v: f64) -> String {
    format!("{:.3}", round_half_away(v, 3))
}

/// Fixed-column sweep CSV:
/// `bits,P_mean,P_std,C,T_mean,T_std,I_mean,I_std,Iprime_mean,Iprime_std`.
pub fn sweep_csv(table: &[SweepTableRow]) -> String {
    let mut out = String::from("bits,P_mean,P_std,C,T_mean,T_std,I_mean,I_std,Iprime_mean,Iprime_std\n");
    for row in table {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.bits_label,
            fmt3(row.p_mean),
            fmt3(row.p_std),
            fmt3(row.c),
            fmt3(row.t_mean),
            fmt3(row.t_std),
            fmt3(row.i_mean),
            fmt3(row.i_std),
            fmt3(row.iprime_mean),
            fmt3(row.iprime_std),
        );
    }
    out
}

/// Console rendering of the sweep table with the Pareto knee marked.
pub fn sweep_table_text(table: &[SweepTableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>16} {:>7} {:>15} {:>16} {:>16}  knee",
        "bits", "P", "C", "T (ms)", "I", "I'"
    );
    for row in table {
        let _ = writeln!(
            out,
            "{:>6} {:>7} ± {:<6} {:>7} {:>7} ± {:<5} {:>8} ± {:<5} {:>8} ± {:<5} {}",
            row.bits_label,
            fmt3(row.p_mean),
            fmt3(row.p_std),
            fmt3(row.c),
            fmt3(row.t_mean),
            fmt3(row.t_std),
            fmt3(row.i_mean),
            fmt3(row.i_std),
            fmt3(row.iprime_mean),
            fmt3(row.iprime_std),
            if row.pareto_knee { "  <- Pareto knee" } else { "" },
        );
    }
    out
}

fn table_of(record: &RunRecord) -> Result<Vec<SweepTableRow>, CliError> {
    if let Some(table) = &record.sweep_table {
        return Ok(table.clone());
    }
    // fall back to aggregating rows in first-seen label order
    let mut order: Vec<String> = Vec::new();
    for row in &record.rows {
        if !order.contains(&row.bits_label) {
            order.push(row.bits_label.clone());
        }
    }
    if order.is_empty() {
        return Err(CliError::Usage("record carries no configuration rows".into()));
    }
    Ok(RunRecord::build_sweep_table(&record.rows, &order))
}

fn plot_name(record: &RunRecord, stem: &str) -> String {
    format!("{}-{stem}.dat", record.run_id)
}

/// Emit plot-ready columnar files for one record: the index-vs-bits
/// curves, the accuracy/latency component breakdown, the evaluated-config
/// scatter, and the metric-ranking comparison. Returns the paths written.
pub fn write_plotdata(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let table = table_of(record)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| CliError::Io { path, source }
    };
    let mut written = Vec::new();

    let mut curves = String::from("# bits I_mean I_std Iprime_mean Iprime_std\n");
    for row in &table {
        let _ = writeln!(
            curves,
            "{} {} {} {} {}",
            row.bits_label,
            fmt3(row.i_mean),
            fmt3(row.i_std),
            fmt3(row.iprime_mean),
            fmt3(row.iprime_std)
        );
    }
    let path = out_dir.join(plot_name(record, "index-vs-bits"));
    std::fs::write(&path, curves).map_err(io(&path))?;
    written.push(path);

    let mut components = String::from("# bits P_mean P_std T_mean T_std\n");
    for row in &table {
        let _ = writeln!(
            components,
            "{} {} {} {} {}",
            row.bits_label,
            fmt3(row.p_mean),
            fmt3(row.p_std),
            fmt3(row.t_mean),
            fmt3(row.t_std)
        );
    }
    let path = out_dir.join(plot_name(record, "components-vs-bits"));
    std::fs::write(&path, components).map_err(io(&path))?;
    written.push(path);

    let mut scatter = String::from("# C P T I Iprime seed bits\n");
    for row in &record.rows {
        let _ = writeln!(
            scatter,
            "{} {} {} {} {} {} {}",
            fmt3(row.compression_c),
            fmt3(row.accuracy_p),
            fmt3(row.latency_t_ms),
            fmt3(row.index_i),
            fmt3(row.index_i_prime),
            row.seed,
            row.bits_label
        );
    }
    let path = out_dir.join(plot_name(record, "pareto-scatter"));
    std::fs::write(&path, scatter).map_err(io(&path))?;
    written.push(path);

    // ranking comparison over the aggregated rows
    let thresh = record.rows.first().map(|r| r.thresh).unwrap_or(0.0);
    let points: Vec<MetricPoint> = table
        .iter()
        .filter(|r| r.t_mean > 0.0)
        .map(|r| MetricPoint::new(r.bits_label.clone(), r.p_mean.clamp(0.0, 1.0), r.c, r.t_mean))
        .collect::<Result<_, _>>()?;
    if points.len() >= 2 {
        let mut ranks = String::from("# bits I_rank Iprime_rank ACP_rank ALS_rank\n");
        let by = |kind: MetricKind, t: Option<f64>| -> Result<Vec<(String, usize)>, CliError> {
            Ok(rank_configs(&points, kind, t)?)
        };
        let i_ranks = by(MetricKind::Index, None)?;
        let ip_ranks = by(MetricKind::RefinedIndex, Some(thresh))?;
        let acp_ranks = by(MetricKind::Acp, None)?;
        let als_ranks = by(MetricKind::Als, None)?;
        let rank_of = |ranks: &[(String, usize)], label: &str| {
            ranks.iter().find(|(l, _)| l == label).map(|(_, r)| *r).unwrap_or(0)
        };
        for row in &table {
            let _ = writeln!(
                ranks,
                "{} {} {} {} {}",
                row.bits_label,
                rank_of(&i_ranks, &row.bits_label),
                rank_of(&ip_ranks, &row.bits_label),
                rank_of(&acp_ranks, &row.bits_label),
                rank_of(&als_ranks, &row.bits_label)
            );
        }
        let path = out_dir.join(plot_name(record, "metric-ranks"));
        std::fs::write(&path, ranks).map_err(io(&path))?;
        written.push(path);

        // threshold-sensitivity sweep over the aggregated rows: which
        // configuration peaks as the tolerated accuracy drop widens
        if record.num_classes > 0 {
            if let Some(fp_row) = table.iter().find(|r| r.bits_label == "32") {
                let spec = ThresholdSpec::new(
                    record.num_classes,
                    fp_row.p_mean.clamp(0.0, 1.0),
                    0.0,
                )?;
                let grid: Vec<f64> = (0..=20).map(|i| f64::from(i) * 0.05).collect();
                let rows = threshold_ablation(&points, &spec, &grid)?;
                let mut ablation = String::from("# delta threshold argmax_bits peak_iprime\n");
                for row in &rows {
                    let _ = writeln!(
                        ablation,
                        "{} {} {} {}",
                        fmt3(row.delta),
                        fmt3(row.resolved_threshold),
                        row.argmax_bits_label,
                        fmt3(row.peak_i_prime)
                    );
                }
                let path = out_dir.join(plot_name(record, "threshold-ablation"));
                std::fs::write(&path, ablation).map_err(io(&path))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Emit one record in the requested format; returns the files written.
pub fn emit(
    record: &RunRecord,
    format: super::config::ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    use super::config::ReportFormat;
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    match format {
        ReportFormat::Csv => {
            let table = table_of(record)?;
            let path = out_dir.join(format!("{}.csv", record.run_id));
            std::fs::write(&path, sweep_csv(&table)).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(vec![path])
        }
        ReportFormat::Json => {
            let path = out_dir.join(format!("{}.report.json", record.run_id));
            let json = serde_json::to_string_pretty(record)
                .map_err(|e| CliError::Integrity(format!("record does not serialize: {e}")))?;
            std::fs::write(&path, json).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(vec![path])
        }
        ReportFormat::Table => {
            let table = table_of(record)?;
            let path = out_dir.join(format!("{}.txt", record.run_id));
            std::fs::write(&path, sweep_table_text(&table)).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(vec![path])
        }
        ReportFormat::Plotdata => write_plotdata(record, out_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::EnvironmentInfo;
    use crate::cli::record::ReportRow;

    fn sample_record() -> RunRecord {
        let mut rows = Vec::new();
        for seed in [0u64, 1] {
            for (label, p, c) in [("32", 0.82, 1.0), ("8", 0.79, 4.0), ("4", 0.60, 8.0)] {
                rows.push(ReportRow::from_raw(seed, label, p, c, 1.1, 0.5).unwrap());
            }
        }
        let table =
            RunRecord::build_sweep_table(&rows, &["32".into(), "8".into(), "4".into()]);
        RunRecord {
            run_id: "r1".into(),
            timestamp_unix_ms: 0,
            command: "sweep".into(),
            config: serde_json::json!({}),
            seeds: vec![0, 1],
            num_classes: 10,
            rows,
            sweep_table: Some(table),
            search_log: None,
            train_summary: None,
            latency_samples: vec![],
            environment: EnvironmentInfo::capture(),
            artifacts: vec![],
        }
    }

    #[test]
    fn csv_has_fixed_header_and_is_byte_stable() {
        let record = sample_record();
        let a = sweep_csv(record.sweep_table.as_ref().unwrap());
        let b = sweep_csv(record.sweep_table.as_ref().unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with(
            "bits,P_mean,P_std,C,T_mean,T_std,I_mean,I_std,Iprime_mean,Iprime_std\n"
        ));
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn plotdata_writes_all_series() {
        let record = sample_record();
        let dir = tempfile::tempdir().unwrap();
        let written = write_plotdata(&record, dir.path()).unwrap();
        assert_eq!(written.len(), 5);
        for path in &written {
            let body = std::fs::read_to_string(path).unwrap();
            assert!(body.starts_with('#'), "{path:?} missing header line");
            assert!(body.lines().count() >= 2);
        }
        let ablation = written
            .iter()
            .find(|p| p.display().to_string().contains("threshold-ablation"))
            .expect("ablation series present");
        let body = std::fs::read_to_string(ablation).unwrap();
        // delta = 0 gates every lossy configuration
        assert!(body.lines().nth(1).unwrap().starts_with("0.000"));
        assert_eq!(body.lines().count(), 22);
    }

    #[test]
    fn table_marks_knee() {
        let record = sample_record();
        let text = sweep_table_text(record.sweep_table.as_ref().unwrap());
        assert!(text.contains("Pareto knee"));
    }
}
