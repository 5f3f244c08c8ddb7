//! Layers, the three built-in architectures, and weight files.
//!
//! Networks are generic over [`Real`](crate::Real): production runs in `f32`,
//! gradient checks run on `f64` replicas of the same code.

pub mod config;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod weights;

pub use config::{
    config_c3d_transfer, config_scratch3d, config_vgg16_2d, InputLayout, LayerKind, LayerSpec,
    ModelConfig, ModelKind, ScratchDesign, SLICES_PER_PATIENT,
};
pub use model::{Cache, Forward, Gradients, Mode, Model, Param};
pub use weights::{load_weights, read_weights, save_weights, WeightFile};
