//! Fully connected autoencoder with hand-written backpropagation, SGD/Adam,
//! a training loop over any loss kind, a linear probe, checkpoints, and
//! finite-difference gradient checks.

mod checkpoint;
mod gradcheck;
mod network;
mod optim;
mod probe;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use gradcheck::{loss_gradient_error, network_gradient_error, relative_error, FD_STEP, REL_FLOOR};
pub use network::{Activation, Autoencoder, Dense, DenseGrad, ForwardCache, ForwardPass, Gradients};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
pub use probe::{linear_probe, ProbeConfig};
pub use train::{train, TrainConfig, TrainLog};

/// Hidden widths of the default `D-64-4-64-D` network.
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 4, 64];
