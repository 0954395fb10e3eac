//! Binarized convolutional networks for two-class frame classification.
//!
//! Float training with optional binarized weights (`α·sign(W)` per kernel),
//! a bit-packed inference path, detection metrics, frame ingestion, and
//! compact model files.

pub mod binarize;
pub mod dataset;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod packed;
pub mod store;
pub mod tensor;
pub mod train;

pub use binarize::{binarize_kernel, binarize_network, AlphaGranularity, BinarizedKernel, BinarizedNetwork};
pub use error::{Error, FormatError, Result};
pub use metrics::{accumulate, compute_metrics, ConfusionCounts, Metrics};
pub use network::{classify, forward, init_params, LayerSpec, MapShape, NetworkParams, NetworkSpec};
pub use packed::{packed_forward, BinarizedModel};
pub use store::{LoadedModel, Metadata, ModelKind};
pub use tensor::{Shape4, Tensor4};
pub use train::{train_loop, Checkpoint, TrainConfig, TrainMode};
