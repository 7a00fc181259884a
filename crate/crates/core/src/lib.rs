//! MBConv image classifier: tensors with tape autodiff, the network and its
//! presets, augmentation, optimizers, data loading, metrics and training.

pub mod augment;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Element, Shape, Tensor};
