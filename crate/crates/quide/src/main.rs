//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quide::cli::{
    cmd_bench, cmd_report, cmd_search, cmd_sweep, cmd_train, cmd_verify_paper, report, CliError,
    ExperimentConfig, Overrides, ReportFormat,
};
use quide::quant::QuantConfig;

#[derive(Parser)]
#[command(
    name = "quide",
    about = "Efficiency scoring for quantized neural networks: train a baseline, sweep bit-widths, search mixed-precision assignments, and verify published reference tables",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Bit-widths to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    /// Accuracy-drop tolerance for the viability threshold.
    #[arg(long)]
    delta: Option<f64>,
    /// Output directory for records and artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Trained baseline weight file.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full-precision baseline and save its weights.
    Train(CommonArgs),
    /// Sweep bit-widths across seeds and emit the scored table.
    Sweep(CommonArgs),
    /// Genetic mixed-precision search driven by the gated index.
    Search(CommonArgs),
    /// Measure latency of the baseline and optionally one quantized config.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Per-layer bit-widths to benchmark, e.g. 8-8-8-4.
        #[arg(long)]
        bits_config: Option<String>,
    },
    /// Re-emit saved run records after integrity verification.
    Report {
        /// Record JSON paths.
        #[arg(long, value_delimiter = ',', required = true)]
        records: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Recompute the bundled published reference tables and diff them.
    VerifyPaper,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(common.config.as_deref())?;
    config.apply(&Overrides {
        seeds: common.seeds.clone(),
        bits: common.bits.clone(),
        delta: common.delta,
        out_dir: common.out_dir.clone(),
        weights_path: common.weights.clone(),
    })?;
    Ok(config)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let config = load_config(&common)?;
            let (record, weights_path) = cmd_train(&config)?;
            let summary = record.train_summary.as_ref().expect("train summary");
            println!(
                "trained baseline: test accuracy {:.4}, best epoch {}, weights {} (sha256 {})",
                summary.final_test_accuracy,
                summary.best_epoch,
                weights_path.display(),
                &summary.weight_sha256[..12],
            );
            println!("record: {}", record.artifacts.last().unwrap());
            Ok(())
        }
        Command::Sweep(common) => {
            let config = load_config(&common)?;
            let record = cmd_sweep(&config)?;
            print!(
                "{}",
                report::sweep_table_text(record.sweep_table.as_ref().expect("sweep table"))
            );
            println!("record: {}", record.artifacts[0]);
            Ok(())
        }
        Command::Search(common) => {
            let config = load_config(&common)?;
            let record = cmd_search(&config)?;
            let log = record.search_log.as_ref().expect("search log");
            println!(
                "best topology {} with fitness {:.4} after {} distinct evaluations",
                log.best_genome, log.best_fitness, log.distinct_evaluations
            );
            for row in &record.rows {
                println!(
                    "  {:<16} P {:.4}  C {:.3}  T {:.3} ms  I' {:.4}",
                    row.bits_label, row.accuracy_p, row.compression_c, row.latency_t_ms,
                    row.index_i_prime
                );
            }
            println!("record: {}", record.artifacts[0]);
            Ok(())
        }
        Command::Bench { common, bits_config } => {
            let config = load_config(&common)?;
            let quant = bits_config
                .map(|s| s.parse::<QuantConfig>())
                .transpose()
                .map_err(CliError::Quant)?;
            let record = cmd_bench(&config, quant.as_ref())?;
            for labelled in &record.latency_samples {
                let s = &labelled.sample;
                println!(
                    "{:<12} median {:.4} ms  p10 {:.4}  p90 {:.4}{}",
                    labelled.label,
                    s.median_ms,
                    s.p10_ms,
                    s.p90_ms,
                    s.resolution_warning
                        .as_deref()
                        .map(|w| format!("  [warning: {w}]"))
                        .unwrap_or_default()
                );
            }
            println!("record: {}", record.artifacts[0]);
            Ok(())
        }
        Command::Report { records, format, out_dir } => {
            let written = cmd_report(&records, format, &out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::VerifyPaper => {
            let report = cmd_verify_paper()?;
            print!("{}", report.render());
            if report.all_pass() {
                Ok(())
            } else {
                Err(CliError::Verification(
                    "published-table recomputation exceeded tolerance; see diff above".into(),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
