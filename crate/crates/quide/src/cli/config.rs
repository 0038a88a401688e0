//! Experiment configuration: a single JSON file plus flag overrides.
//! Unknown keys are rejected up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::bench::TimingProtocol;
use crate::data::{self, Dataset, Split};
use crate::model::TrainConfig;
use crate::search::GaParams;

/// Environment variable that re-roots relative IDX paths.
pub const DATA_DIR_ENV: &str = "QUIDE_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// IDX image/label pairs on disk (big-endian magics 2051/2049).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Rendered 28x28 ten-class digits, fully self-contained.
    SynthDigits { train_n: usize, test_n: usize, seed: u64 },
    /// Gaussian class blobs.
    SynthBlobs {
        classes: u32,
        train_n: usize,
        test_n: usize,
        dims: (usize, usize, usize),
        separation: f32,
        seed: u64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::SynthDigits {
            train_n: 8000,
            test_n: 2000,
            seed: 0,
        }
    }
}

fn resolve_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

fn missing_file_as_config_error(err: data::DataError) -> CliError {
    match &err {
        data::DataError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            CliError::Config(format!("dataset file {path} does not exist"))
        }
        _ => CliError::Data(err),
    }
}

impl DatasetSpec {
    /// Materialize `(train, test)` datasets.
    pub fn load(&self) -> Result<(Dataset, Dataset), CliError> {
        match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let mut train =
                    data::load_idx(&resolve_path(train_images), &resolve_path(train_labels))
                        .map_err(missing_file_as_config_error)?;
                let mut test =
                    data::load_idx(&resolve_path(test_images), &resolve_path(test_labels))
                        .map_err(missing_file_as_config_error)?;
                // the two splits must agree on the label space
                let k = train.num_classes.max(test.num_classes);
                train.num_classes = k;
                test.num_classes = k;
                test.split = Split::Test;
                Ok((train, test))
            }
            DatasetSpec::SynthDigits { train_n, test_n, seed } => {
                let train = data::synth_digits(*train_n, *seed)?;
                let mut test = data::synth_digits(*test_n, seed.wrapping_add(1))?;
                test.split = Split::Test;
                Ok((train, test))
            }
            DatasetSpec::SynthBlobs {
                classes,
                train_n,
                test_n,
                dims,
                separation,
                seed,
            } => {
                let train =
                    data::synth_gaussian_blobs(*classes, *train_n, *dims, *separation, *seed)?;
                let mut test = data::synth_gaussian_blobs(
                    *classes,
                    *test_n,
                    *dims,
                    *separation,
                    seed.wrapping_add(1),
                )?;
                test.split = Split::Test;
                Ok((train, test))
            }
        }
    }
}

/// Output format for `report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
    Plotdata,
}

/// The resolved configuration every command runs from. Validated before
/// any work starts; serialized verbatim into run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Trained baseline weights; required by sweep/search/bench.
    pub weights_path: Option<PathBuf>,
    /// Bit-widths swept by `sweep`.
    pub bits: Vec<u8>,
    /// Calibration seeds.
    pub seeds: Vec<u64>,
    /// Accuracy-drop tolerance in the viability threshold.
    pub delta: f64,
    /// Calibration subset size.
    pub calibration_n: usize,
    /// Cap on test samples used for accuracy (None = full test set).
    pub eval_subset: Option<usize>,
    pub timing: TimingProtocol,
    pub train: TrainConfig,
    /// Cap on training samples (None = full training set).
    pub train_subset: Option<usize>,
    pub ga: GaParams,
    /// Accuracy-evaluation subset for GA fitness.
    pub ga_eval_subset: usize,
    /// Surrogate latency for GA fitness; None measures each genome once.
    pub fixed_latency_ms: Option<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            weights_path: None,
            bits: vec![32, 16, 8, 4, 2],
            seeds: vec![0, 42, 123],
            delta: 0.19,
            calibration_n: 512,
            eval_subset: None,
            timing: TimingProtocol::default(),
            train: TrainConfig::default(),
            train_subset: None,
            ga: GaParams::default(),
            ga_eval_subset: 1024,
            fixed_latency_ms: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub bits: Option<Vec<u8>>,
    pub delta: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let config = match path {
            None => Self::default(),
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&raw)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<(), CliError> {
        if let Some(seeds) = &overrides.seeds {
            self.seeds = seeds.clone();
        }
        if let Some(bits) = &overrides.bits {
            self.bits = bits.clone();
        }
        if let Some(delta) = overrides.delta {
            self.delta = delta;
        }
        if let Some(dir) = &overrides.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(w) = &overrides.weights_path {
            self.weights_path = Some(w.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.bits.is_empty() {
            return Err(CliError::Config("bits list is empty".into()));
        }
        for &b in &self.bits {
            if !crate::quant::SUPPORTED_BITS.contains(&b) {
                return Err(CliError::Config(format!(
                    "unsupported bit-width {b}; expected one of 2, 4, 8, 16, 32"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds list is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(CliError::Config(format!("delta {} outside [0,1]", self.delta)));
        }
        if self.calibration_n == 0 {
            return Err(CliError::Config("calibration_n must be positive".into()));
        }
        if self.timing.timed_iters == 0 || self.timing.batch_size == 0 {
            return Err(CliError::Config("timing protocol needs positive counts".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let raw = r#"{"bits": [8], "no_such_key": 1}"#;
        let parsed: Result<ExperimentConfig, _> = serde_json::from_str(raw);
        assert!(parsed.is_err());
    }

    #[test]
    fn bad_bits_rejected() {
        let mut config = ExperimentConfig::default();
        config.bits = vec![8, 5];
        assert!(config.validate().is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut config = ExperimentConfig::default();
        config
            .apply(&Overrides {
                seeds: Some(vec![7]),
                bits: Some(vec![8, 4]),
                delta: Some(0.3),
                out_dir: Some(PathBuf::from("elsewhere")),
                weights_path: None,
            })
            .unwrap();
        assert_eq!(config.seeds, vec![7]);
        assert_eq!(config.bits, vec![8, 4]);
        assert_eq!(config.delta, 0.3);
    }

    #[test]
    fn missing_idx_path_is_a_config_error() {
        let spec = DatasetSpec::Idx {
            train_images: PathBuf::from("/nonexistent/train-images"),
            train_labels: PathBuf::from("/nonexistent/train-labels"),
            test_images: PathBuf::from("/nonexistent/t10k-images"),
            test_labels: PathBuf::from("/nonexistent/t10k-labels"),
        };
        let err = spec.load().unwrap_err();
        assert_eq!(err.exit_code(), 1, "missing dataset path should be a config error");
    }

    #[test]
    fn synth_digits_spec_loads_split() {
        let spec = DatasetSpec::SynthDigits { train_n: 50, test_n: 20, seed: 1 };
        let (train, test) = spec.load().unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 20);
        // the splits use different seeds
        assert!(train.image(0) != test.image(0));
    }
}
