//! Calibration toolkit built around adaptive test-time augmentation.
//!
//! The crate reads stored logits of a classifier evaluated on an original
//! input and on augmented copies of it, and produces calibrated probability
//! vectors without ever changing the predicted class.
//!
//! - [`simplex`]: probability vectors, logit matrices, datasets
//! - [`metrics`]: Brier, multi-class Brier, ECE, NLL, accuracy
//! - [`atta`]: matrix/vector adaptive fusion and the per-sample weight search
//! - [`optim`]: NLL fitting of the fusion weights with Adam
//! - [`baselines`]: temperature scaling, isotonic regression, histogram binning
//! - [`augment`]: flip, crop, brightness and contrast transforms and policies
//! - [`synth`]: synthetic miscalibrated classifiers for testing
//! - [`io`] and [`cli`]: file formats and the command-line front end

pub mod atta;
pub mod augment;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod simplex;
pub mod synth;

pub use error::{Error, Result};
