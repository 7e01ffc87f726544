//! Semi-supervised foreign-object detection for track imagery.
//!
//! A convolutional autoencoder is trained on normal images only, alongside a
//! discriminator that tries to tell inputs from reconstructions. At test time
//! an image is scored by how differently the encoder sees the input and its
//! reconstruction; the per-pixel residual, minus the mean training residual,
//! localizes the object.
//!
//! Modules:
//! - [`model`]: the encoder / decoder / discriminator networks
//! - [`losses`]: reconstruction, perceptual, latent and adversarial losses
//! - [`training`]: alternating optimization, error map, checkpoints
//! - [`inference`]: anomaly scores, difference maps, masks and boxes
//! - [`metrics`]: ROC / PR curves, AUROC, AP, EER, KDE
//! - [`datagen`]: procedural track scenes with composited objects
//! - [`commands`]: the `gen-data` / `train` / `eval` / `report` pipeline

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{ImageBatch, LatentCode, FeatureStack, Mode, Network, Networks};
pub use tensor::{Shape, Tensor};
