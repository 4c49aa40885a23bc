//! The disentangled dense fusion network and its composite loss.

pub mod attention;
mod config;
mod model;

pub use config::{Branches, CrossSource, FusionConfig, Task};
pub use model::{fusion_loss, joint_kronecker, Encoder, FusionModel, FusionOutput, Modality, Objective};
