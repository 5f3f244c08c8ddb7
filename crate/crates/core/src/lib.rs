//! Volumetric deep-learning toolkit for CT-based binary classification.
//!
//! The crate covers the whole pipeline: CT volume preprocessing ([`volume`]),
//! cohort manifests and a synthetic cohort generator ([`cohort`]), training-time
//! augmentation ([`augment`]), a small explicit-backprop layer zoo with the three
//! built-in architectures ([`nn`]), class-balanced BCE and Adam ([`optim`]), the
//! training protocol ([`train`]) and ROC/AUC evaluation ([`metrics`]).

pub mod augment;
pub mod cohort;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use rng::{RngStream, StreamLabel};
pub use tensor::{Real, Tensor, TensorOf};
