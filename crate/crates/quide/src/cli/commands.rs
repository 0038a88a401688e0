//! The experiment commands behind the CLI surface.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ReportFormat};
use super::record::{LabelledLatency, ReportRow, RunRecord, TrainSummary};
use super::reference::{verify_published_tables, VerifyReport};
use super::{report, CliError};
use crate::bench::{measure_latency, EnvironmentInfo, LatencySample};
use crate::data::{sample_calibration, Dataset, Split};
use crate::metrics::{resolve_threshold, ThresholdSpec};
use crate::model::{
    evaluate_accuracy, load_weights_checked, save_weights, train_baseline, FpModel, NetworkDef,
    WeightStore,
};
use crate::quant::{apply_quantization, calibrate, CalibrationStats, QuantConfig};
use crate::search::{
    exhaustive_search, run_ga, FitnessEvaluator, Genome, LatencySource, ModelEvaluator,
    SearchSpace,
};

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn run_id(command: &str) -> String {
    format!("{command}-{}", now_ms())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn config_snapshot(config: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn network_for(dataset: &Dataset) -> NetworkDef {
    NetworkDef::simple_cnn(dataset.sample_dims(), dataset.num_classes as usize)
}

fn required_weights(config: &ExperimentConfig, net: &NetworkDef) -> Result<WeightStore, CliError> {
    let path = config.weights_path.as_ref().ok_or_else(|| {
        CliError::Config("no weights_path configured; run `quide train` first and point weights_path at its output".into())
    })?;
    Ok(load_weights_checked(net, path)?)
}

fn eval_view(test: &Dataset, subset: Option<usize>) -> Result<Dataset, CliError> {
    match subset {
        Some(n) if n < test.len() => Ok(test.take(n, Split::Test)?),
        _ => Ok(test.clone()),
    }
}

fn summarized(sample: &LatencySample) -> LatencySample {
    let mut s = sample.clone();
    s.per_pass_ms.clear();
    s
}

fn base_record(command: &str, config: &ExperimentConfig) -> RunRecord {
    RunRecord {
        run_id: run_id(command),
        timestamp_unix_ms: now_ms(),
        command: command.to_string(),
        config: config_snapshot(config),
        seeds: config.seeds.clone(),
        num_classes: 0,
        rows: Vec::new(),
        sweep_table: None,
        search_log: None,
        train_summary: None,
        latency_samples: Vec::new(),
        environment: EnvironmentInfo::capture(),
        artifacts: Vec::new(),
    }
}

/// Train the full-precision baseline, persist the weights, and record the
/// run. Returns the record and the weight file path.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(RunRecord, PathBuf), CliError> {
    ensure_dir(&config.out_dir)?;
    let (train_set, test_set) = config.dataset.load()?;
    let train_set = match config.train_subset {
        Some(n) if n < train_set.len() => train_set.take(n, Split::Train)?,
        _ => train_set,
    };
    let net = network_for(&train_set);
    let outcome = train_baseline(&net, &train_set, &config.train)?;
    let final_test_accuracy =
        evaluate_accuracy(&FpModel::new(&net, &outcome.weights), &test_set, 256)?;

    let weights_path = config.out_dir.join(format!("weights-seed{}.qw", config.train.seed));
    save_weights(&net, &outcome.weights, &weights_path)?;
    let weight_sha256 = sha256_file(&weights_path)?;

    let mut record = base_record("train", config);
    record.seeds = vec![config.train.seed];
    record.num_classes = train_set.num_classes;
    record.train_summary = Some(TrainSummary {
        final_test_accuracy,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        weight_sha256,
        weights_path: weights_path.display().to_string(),
    });
    record.artifacts.push(weights_path.display().to_string());
    let record_path = config.out_dir.join(format!("{}.json", record.run_id));
    record.save(&record_path)?;
    record.artifacts.push(record_path.display().to_string());
    Ok((record, weights_path))
}

/// Per seed and bit-width: calibrate, quantize, evaluate accuracy, measure
/// latency, and score. Emits the aggregated table with the Pareto knee
/// marked.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<RunRecord, CliError> {
    ensure_dir(&config.out_dir)?;
    let (train_set, test_set) = config.dataset.load()?;
    let net = network_for(&train_set);
    let weights = required_weights(config, &net)?;
    let eval_set = eval_view(&test_set, config.eval_subset)?;
    if test_set.len() < config.timing.batch_size {
        return Err(CliError::Config(format!(
            "test set has {} samples, timing batch needs {}",
            test_set.len(),
            config.timing.batch_size
        )));
    }
    let timing_input = test_set.batch(0, config.timing.batch_size);

    let fp_model = FpModel::new(&net, &weights);
    let fp_accuracy = evaluate_accuracy(&fp_model, &eval_set, 256)?;
    let thresh = resolve_threshold(&ThresholdSpec::new(
        train_set.num_classes,
        fp_accuracy,
        config.delta,
    )?)?;

    let quantizable = net.quantizable_layers().len();
    let mut record = base_record("sweep", config);
    record.num_classes = train_set.num_classes;
    for &seed in &config.seeds {
        let calib_n = config.calibration_n.min(train_set.len());
        let calib = sample_calibration(&train_set, calib_n, seed)?;
        let stats = calibrate(&net, &weights, &calib)?;
        for &bits in &config.bits {
            let label = bits.to_string();
            let (accuracy, sample) = if bits == 32 {
                let sample = measure_latency(&fp_model, &config.timing, &timing_input)?;
                (fp_accuracy, sample)
            } else {
                let qconfig = QuantConfig::uniform(bits, quantizable)?;
                let model = apply_quantization(&net, &weights, &qconfig, &stats)?;
                let accuracy = evaluate_accuracy(&model, &eval_set, 256)?;
                let sample = measure_latency(&model, &config.timing, &timing_input)?;
                (accuracy, sample)
            };
            let compression = 32.0 / f64::from(bits);
            record.rows.push(ReportRow::from_raw(
                seed,
                label.clone(),
                accuracy,
                compression,
                sample.median_ms,
                thresh,
            )?);
            record.latency_samples.push(LabelledLatency {
                label: format!("{label}@seed{seed}"),
                sample: summarized(&sample),
            });
        }
    }

    let bits_order: Vec<String> = config.bits.iter().map(|b| b.to_string()).collect();
    record.sweep_table = Some(RunRecord::build_sweep_table(&record.rows, &bits_order));

    let record_path = config.out_dir.join(format!("{}.json", record.run_id));
    record.save(&record_path)?;
    let csv_path = config.out_dir.join(format!("{}.csv", record.run_id));
    std::fs::write(&csv_path, report::sweep_csv(record.sweep_table.as_ref().unwrap())).map_err(
        |source| CliError::Io {
            path: csv_path.display().to_string(),
            source,
        },
    )?;
    record.artifacts.push(record_path.display().to_string());
    record.artifacts.push(csv_path.display().to_string());
    record.save(&record_path)?;
    Ok(record)
}

/// Everything a search run needs besides the GA itself.
struct SearchContext {
    net: NetworkDef,
    weights: WeightStore,
    stats: CalibrationStats,
    fitness_set: Dataset,
    test_set: Dataset,
    thresh: f64,
}

fn search_context(config: &ExperimentConfig) -> Result<SearchContext, CliError> {
    let (train_set, test_set) = config.dataset.load()?;
    let net = network_for(&train_set);
    let weights = required_weights(config, &net)?;
    // ranges are calibrated once per run on the FP model and shared
    // across genomes, so the fitness landscape is static
    let calib_n = config.calibration_n.min(train_set.len());
    let calib = sample_calibration(&train_set, calib_n, config.ga.seed)?;
    let stats = calibrate(&net, &weights, &calib)?;
    let fitness_set = eval_view(&test_set, Some(config.ga_eval_subset))?;
    if config.fixed_latency_ms.is_none() && fitness_set.len() < config.timing.batch_size {
        return Err(CliError::Config(format!(
            "fitness evaluation set has {} samples, timing batch needs {}",
            fitness_set.len(),
            config.timing.batch_size
        )));
    }
    let fp_accuracy = evaluate_accuracy(&FpModel::new(&net, &weights), &fitness_set, 256)?;
    let thresh = resolve_threshold(&ThresholdSpec::new(
        train_set.num_classes,
        fp_accuracy,
        config.delta,
    )?)?;
    Ok(SearchContext {
        net,
        weights,
        stats,
        fitness_set,
        test_set,
        thresh,
    })
}

fn latency_source(config: &ExperimentConfig) -> LatencySource {
    match config.fixed_latency_ms {
        Some(t) => LatencySource::Fixed(t),
        None => LatencySource::Measure(config.timing),
    }
}

/// Run the genetic mixed-precision search with the gated index as fitness.
///
/// The record carries the full trajectory, the best genome's full-test
/// metrics, and the uniform-config baselines evaluated under the same
/// fitness evaluator.
pub fn cmd_search(config: &ExperimentConfig) -> Result<RunRecord, CliError> {
    ensure_dir(&config.out_dir)?;
    let ctx = search_context(config)?;
    let space = SearchSpace::standard(ctx.net.quantizable_layers().len())
        .map_err(CliError::Search)?;

    let mut evaluator = ModelEvaluator::new(
        &ctx.net,
        &ctx.weights,
        &ctx.stats,
        &ctx.fitness_set,
        256,
        latency_source(config),
    );
    let outcome = run_ga(&config.ga, &space, &mut evaluator, ctx.thresh)?;

    let mut record = base_record("search", config);
    record.seeds = vec![config.ga.seed];
    record.num_classes = ctx.test_set.num_classes;

    // uniform baselines under the very same evaluator
    for &allele in &space.alleles {
        let genome = Genome { per_layer_bits: vec![allele; space.layers] };
        let parts = evaluator.evaluate(&genome)?;
        record.rows.push(ReportRow::from_raw(
            config.ga.seed,
            genome.to_string(),
            parts.accuracy_p,
            parts.compression_c,
            parts.latency_t_ms,
            ctx.thresh,
        )?);
    }

    // the returned topology is scored on the full test set
    let best_config = outcome.best.to_config()?;
    let best_model = apply_quantization(&ctx.net, &ctx.weights, &best_config, &ctx.stats)?;
    let full_accuracy = evaluate_accuracy(&best_model, &ctx.test_set, 256)?;
    let fp_full = evaluate_accuracy(&FpModel::new(&ctx.net, &ctx.weights), &ctx.test_set, 256)?;
    let full_thresh = resolve_threshold(&ThresholdSpec::new(
        ctx.test_set.num_classes,
        fp_full,
        config.delta,
    )?)?;
    let full_latency = match config.fixed_latency_ms {
        Some(t) => t,
        None => {
            let input = ctx.test_set.batch(0, config.timing.batch_size);
            let sample = measure_latency(&best_model, &config.timing, &input)?;
            record.latency_samples.push(LabelledLatency {
                label: format!("best-{}", outcome.best),
                sample: summarized(&sample),
            });
            sample.median_ms
        }
    };
    record.rows.push(ReportRow::from_raw(
        config.ga.seed,
        format!("best:{}", outcome.best),
        full_accuracy,
        outcome.best_parts.compression_c,
        full_latency,
        full_thresh,
    )?);
    record.search_log = Some(outcome.log);

    let record_path = config.out_dir.join(format!("{}.json", record.run_id));
    record.save(&record_path)?;
    record.artifacts.push(record_path.display().to_string());
    record.save(&record_path)?;
    Ok(record)
}

/// Enumerate the whole manifold with the same evaluator the GA uses.
/// Exposed for small layer counts as a verification oracle.
pub fn cmd_exhaustive(config: &ExperimentConfig) -> Result<(Genome, f64, usize), CliError> {
    let ctx = search_context(config)?;
    let space = SearchSpace::standard(ctx.net.quantizable_layers().len())
        .map_err(CliError::Search)?;
    let mut evaluator = ModelEvaluator::new(
        &ctx.net,
        &ctx.weights,
        &ctx.stats,
        &ctx.fitness_set,
        256,
        latency_source(config),
    );
    let (best, fitness, table) = exhaustive_search(&space, &mut evaluator, ctx.thresh)?;
    Ok((best, fitness, table.len()))
}

/// Measure latency of the FP model and, optionally, one quantized config.
pub fn cmd_bench(
    config: &ExperimentConfig,
    quant: Option<&QuantConfig>,
) -> Result<RunRecord, CliError> {
    ensure_dir(&config.out_dir)?;
    let (train_set, test_set) = config.dataset.load()?;
    let net = network_for(&train_set);
    let weights = required_weights(config, &net)?;
    if test_set.len() < config.timing.batch_size {
        return Err(CliError::Config(format!(
            "test set has {} samples, timing batch needs {}",
            test_set.len(),
            config.timing.batch_size
        )));
    }
    let input = test_set.batch(0, config.timing.batch_size);

    let mut record = base_record("bench", config);
    record.num_classes = test_set.num_classes;
    let fp_sample = measure_latency(&FpModel::new(&net, &weights), &config.timing, &input)?;
    record.latency_samples.push(LabelledLatency {
        label: "32".into(),
        sample: fp_sample,
    });
    if let Some(qconfig) = quant {
        let calib_n = config.calibration_n.min(train_set.len());
        let calib = sample_calibration(&train_set, calib_n, config.seeds[0])?;
        let stats = calibrate(&net, &weights, &calib)?;
        let model = apply_quantization(&net, &weights, qconfig, &stats)?;
        let sample = measure_latency(&model, &config.timing, &input)?;
        record.latency_samples.push(LabelledLatency {
            label: qconfig.label(),
            sample,
        });
    }
    let record_path = config.out_dir.join(format!("{}.json", record.run_id));
    record.save(&record_path)?;
    record.artifacts.push(record_path.display().to_string());
    record.save(&record_path)?;
    Ok(record)
}

/// Load records, verify their integrity, and emit them in the requested
/// format. Returns the files written.
pub fn cmd_report(
    record_paths: &[PathBuf],
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    if record_paths.is_empty() {
        return Err(CliError::Usage("report needs at least one record path".into()));
    }
    let mut written = Vec::new();
    for path in record_paths {
        let record = RunRecord::load(path)?;
        record.verify()?;
        written.extend(report::emit(&record, format, out_dir)?);
    }
    Ok(written)
}

/// Recompute the bundled published tables and diff them row by row.
pub fn cmd_verify_paper() -> Result<VerifyReport, CliError> {
    Ok(verify_published_tables()?)
}
