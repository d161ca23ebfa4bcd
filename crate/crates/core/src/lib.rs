//! Semi-supervised prostate zone segmentation with Monte Carlo guided
//! interpolation consistency and uncertainty-gated mean-teacher training.

pub mod backbone;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
