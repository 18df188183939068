//! Power side-channel supply-chain screening: a synthetic AES device under
//! test, a one-class WGAN-GP trained on benign traces, FPR-calibrated
//! screening thresholds and the evaluation metrics around them.

pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod sim;
pub mod trace;

pub use error::{Error, FormatError, Result};
