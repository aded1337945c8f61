//! Vision-transformer classification toolkit.

pub mod augment;
pub mod cli;
pub mod dataset;
pub mod autodiff;
pub mod error;
mod fsutil;
pub mod gradcam;
pub mod gradcheck;
pub mod image;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod vit;
pub mod weights;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use optim::{sgd_step, ParamStore, Parameter, Sgd};
pub use tensor::Tensor;
