//! Part-based Siamese verification network.
//!
//! Each body part (head, torso, leg) goes through its own Siamese convolution
//! box: two weight-tied conv+pool layers applied to both inputs, a signed
//! feature-difference layer, two untied conv layers and a fully connected
//! layer. The three part latents are concatenated and mapped to two logits;
//! class 1 means "same identity".

mod checkpoint;
pub mod layers;
mod model;
mod train;

pub use model::{
    init_model, loss, Activation, Affine, ConvSpec, LabeledPair, Prediction, Scb, ScbConfig,
    ScbWeights, ShapeAudit, ShapeStage, SiameseModel, TensorSpec, Weights, PART_NAMES,
};
pub use train::{train, EpochStats, StopReason, TrainConfig, TrainReport};

#[cfg(test)]
mod tests;
