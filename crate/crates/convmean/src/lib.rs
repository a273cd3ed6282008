//! Convolutional Mean: a 1.1K-parameter CNN that estimates the scene
//! illuminant from a 48x32 thumbnail, trained from scratch with a
//! hand-written backward pass.
//!
//! The crate bundles everything around the network: tensor primitives,
//! the forward/backward passes and a compact binary weight format
//! ([`model`]), dataset handling with the rescale-and-crop augmentation
//! and a synthetic scene generator ([`data`]), L1/Adam training with
//! cross-validation ([`train`]), the angular-error statistics of the
//! color-constancy literature ([`metrics`]), and the classic statistical
//! baselines ([`baselines`]).

pub mod baselines;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ppm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
