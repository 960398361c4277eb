//! Seedable sampling and the dense-vector primitives the rest of the crate
//! builds on.

mod rng;
mod sampling;
mod vector;

pub use rng::RngStream;
pub use sampling::{
    sample_chi_square, sample_isotropic_noise, sample_standard_normal, standard_normal, ChiSquare,
    NoiseModel, ScaleMixture, MIXTURE_VARIANCE_TOL,
};
pub use vector::{dot, hadamard, norm2, Signal};

pub(crate) use vector::{dot_slice, norm2_slice};
