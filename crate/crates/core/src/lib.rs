//! Facial expression recognition engine: a VGG-style CNN trained from
//! scratch on FER2013 with manual backpropagation, a suite of optimizers and
//! learning-rate schedules, ten-crop evaluation and gradient saliency maps.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod saliency;
pub mod sched;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
