//! Dense and convolutional networks with hand-written backpropagation,
//! Adam, mini-batch training with early stopping, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use layer::{elu, Layer, LayerSpec};
pub use network::{build_dcnn, build_dcnn_with, build_dnn, DcnnConfig, Input, InputKind, Network, DENSE_WIDTHS};
pub use tensor::Tensor;
pub use train::{
    evaluate_mse, predict, predict_examples, train, train_monitored, EarlyStopping, Examples, Prediction, TargetScaling,
    TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input kind mismatch: {0}")]
    InputKind(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
