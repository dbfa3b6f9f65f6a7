//! Numeric core: tensors and hand-derived forward/backward passes for the
//! convolution, BiLSTM, dropout and dense+softmax layers.

pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::{Activation, Conv1d};
pub use dense::{softmax, TimeDistributedDense};
pub use dropout::Dropout;
pub use loss::{cross_entropy, cross_entropy_grad};
pub use lstm::{BiLstm, LstmCell};
pub use model::{ForwardCache, LayerCount, Model};
pub use tensor::{DType, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dropout rate must be in [0, 1), got {0}")]
    InvalidDropout(f64),
    #[error("stale or mismatched cache: {0}")]
    CacheMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
}

/// Layer sizes of the segmentation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub conv_activation: Activation,
    pub lstm_units: Vec<usize>,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            conv_filters: vec![32, 64, 128],
            kernel_size: 3,
            conv_activation: Activation::Relu,
            lstm_units: vec![250, 125],
            dropout: 0.2,
            n_classes: 4,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Architecture(m.to_string()));
        if self.input_channels == 0 || self.n_classes == 0 {
            return bad("input channels and classes must be positive");
        }
        if self.kernel_size == 0 {
            return bad("kernel size must be at least 1");
        }
        if self.conv_filters.iter().chain(&self.lstm_units).any(|&u| u == 0) {
            return bad("layer sizes must be positive");
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }
}
