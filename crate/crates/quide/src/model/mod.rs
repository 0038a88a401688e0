//! Minimal CPU tensor engine and the SimpleCNN baseline.
//!
//! Four-layer reference architecture: conv(32, 3x3) -> relu -> maxpool(2x2)
//! -> conv(64, 3x3) -> relu -> maxpool(2x2) -> flatten -> fc(128) -> relu
//! -> fc(num_classes). Convolutions zero-pad by 1 so spatial dims survive,
//! which is what makes a 28x28 input land on the fc(128) stage.

mod io;
pub mod layers;
mod network;
mod tensor;
mod train;

pub use io::{load_weights, load_weights_checked, save_weights, WeightManifest};
pub use network::{
    evaluate_accuracy, forward, ActivationTap, ForwardModel, FpModel, LayerDef, LayerParams,
    NetworkDef, WeightStore,
};
pub use tensor::Tensor;
pub use train::{
    loss_and_gradients, train_baseline, Augment, EpochStats, TrainConfig, TrainOutcome,
};

pub(crate) use network::{run_forward_hooked, ActHook};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("tensor shape {shape:?} implies {expected} elements, got {got}")]
    TensorShape {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer_index} ({kind}): {detail}")]
    Shape {
        layer_index: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("no parameters stored for layer {0}")]
    MissingParams(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file {path}: unsupported format version {got}")]
    UnsupportedVersion { path: String, got: u32 },
    #[error("weight file {path}: truncated blob, expected {expected} bytes, got {got}")]
    TruncatedBlob {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("weight file {path}: {detail}")]
    ManifestMismatch { path: String, detail: String },
    #[error("weight file {path}: architecture hash {got} does not match network {expected}")]
    ArchitectureMismatch {
        path: String,
        expected: String,
        got: String,
    },
    #[error("weight file {path}: invalid manifest: {detail}")]
    BadManifest { path: String, detail: String },
}
