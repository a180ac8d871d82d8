//! Residual densely connected CNNs on a small from-scratch tensor engine.
//!
//! - [`tensor`], [`kernels`], [`autograd`]: dense NCHW tensors, forward/backward
//!   kernels and a tape-based reverse-mode differentiator.
//! - [`arch`], [`network`], [`params`]: architecture specs, presets and built
//!   networks with named parameters.
//! - [`analyzer`]: exact parameter and FLOP accounting from a spec.
//! - [`data`]: IDX and CIFAR decoders, preprocessing, augmentation, batching.
//! - [`train`], [`checkpoint`]: SGD training, evaluation, ablation, checkpoints.

pub mod analyzer;
pub mod arch;
pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod kernels;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;

pub use analyzer::{count_flops, count_params, CostReport};
pub use arch::ArchSpec;
pub use autograd::{Mode, Tape, Var};
pub use data::{Dataset, DatasetKind, Split};
pub use error::{Error, Result};
pub use network::Network;
pub use params::{ParamKind, ParamStore};
pub use tensor::{Real, Tensor};
pub use train::{lr_at, sgd_step, Precision, RunMetrics, TrainConfig, Trainer};
