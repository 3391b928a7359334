//! Exact propagation of Gaussian box-regression uncertainty through
//! anchor decoding, followed by post-hoc calibration and evaluation of
//! the decoded uncertainties against ground truth.

pub mod anchor;
pub mod bench;
pub mod calibrate;
pub mod datio;
pub mod dist;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod numeric;
pub mod synth;

pub use error::{Error, Result};
