//! Block-wise compressive-sensing image reconstruction with a fixed
//! random-Gaussian measurement or a jointly learned adaptive one.
//!
//! Images are split into non-overlapping 33x33 blocks; each block is
//! measured by an `m x 1089` linear operator and recovered by a small
//! convolutional network (a fully-connected recovery layer followed by
//! six convolutional layers). Training minimizes the mean squared
//! reconstruction error by explicit backpropagation; in adaptive mode
//! the measurement matrix is a trainable layer of the same network.

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod image_io;
pub mod inference;
pub mod measurement;
pub mod model_file;
pub mod reconnet;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image_io::GrayImage;
pub use measurement::{MeasurementKind, MeasurementOperator, BLOCK_LEN, BLOCK_SIDE};
pub use model_file::Model;
pub use reconnet::{ArchConfig, InitMode, ReconNetParams};
pub use tensor::{Tensor, Tensor64};
pub use training::TrainConfig;
