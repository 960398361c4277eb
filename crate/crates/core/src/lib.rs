//! Denoising cosine-similarity (dCS) training losses and the machinery
//! around them: seedable sampling, blind-spot and time-step masking,
//! signal-to-noise and weight estimators, a small hand-differentiated
//! autoencoder, a Monte Carlo verification harness, and a reproducible
//! synthetic experiment runner.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the estimators, the harness and the CLI use.

pub mod error;
pub mod experiment;
pub mod losses;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense `f64` signal (clean signal, noisy observation, or reconstruction).
pub type SignalVec = numerics::Signal<f64>;
/// Noisy vector, its masked counterpart, and the mask, in `f64`.
pub type MaskedPair = masking::MaskedPair<f64>;
/// Loss value with gradient in `f64`.
pub type LossValue = losses::LossValue<f64>;
/// Mini-batch risk in `f64`.
pub type BatchRisk = losses::BatchRisk<f64>;
/// Autoencoder parameters in `f64`.
pub type AEParams = model::Autoencoder<f64>;
/// Optimizer state in `f64`.
pub type OptimizerState = model::Optimizer<f64>;

pub use masking::{GridShape, MaskVec};
pub use numerics::{NoiseModel, RngStream, ScaleMixture};
pub use weights::WeightEstimate;
