use serde::{Deserialize, Serialize};

use super::{Autoencoder, Gradients, Optimizer, OptimizerSpec};
use crate::error::{Error, Result};
use crate::losses::{evaluate_prepared, prepare_sample, LossConfig};
use crate::numerics::{RngStream, Signal};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            optimizer: OptimizerSpec::default(),
        }
    }
}

/// Mean per-sample loss of every epoch, measured before each step's update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Shuffled mini-batch training on noisy samples only.
///
/// Epoch `e` shuffles with a stream derived from `rng` and label `e`; sample
/// `i` of the dataset draws its mask and weight from a stream keyed by
/// `(e, i)`, so the run is fully determined by `rng`'s key. Non-finite
/// parameters abort with [`Error::Diverged`].
pub fn train<T: Scalar>(
    mut net: Autoencoder<T>,
    data: &[Signal<T>],
    loss: &LossConfig,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(Autoencoder<T>, TrainLog)> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if let Some(bad) = data.iter().find(|x| x.dim() != net.dim()) {
        return Err(Error::DimMismatch {
            expected: net.dim(),
            actual: bad.dim(),
        });
    }
    let mut opt = Optimizer::new(cfg.optimizer, &net)?;
    let mut log = TrainLog::default();
    let shuffle_root = rng.derive_named("shuffle");
    let sample_root = rng.derive_named("samples");
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut shuffle_root.derive(epoch as u64));
        let epoch_root = sample_root.derive(epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&net);
            for &i in batch {
                let x = &data[i];
                let mut stream = epoch_root.derive(i as u64);
                let prepared = prepare_sample(loss, x, &mut stream)?;
                let fp = net.forward(prepared.input(x))?;
                let value = evaluate_prepared(loss, &prepared, x, &fp.reconstruction)?;
                total += value.value.to_f64_lossy();
                net.backward_accumulate(&fp.cache, &value.grad, &mut grads)?;
            }
            grads.scale(T::one() / T::lit(batch.len() as f64));
            opt.step(&mut net, &grads);
            if !net.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good_epoch: epoch.checked_sub(1),
                });
            }
        }
        log.epoch_loss.push(total / data.len() as f64);
    }
    Ok((net, log))
}

/// Fisher-Yates.
fn shuffle(order: &mut [usize], rng: &mut RngStream) {
    for i in (1..order.len()).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::masking::{GridShape, MaskSpec};

    fn data(n: usize, dim: usize, seed: u64) -> Vec<Signal<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| Signal::new((0..dim).map(|_| rng.uniform()).collect()).unwrap())
            .collect()
    }

    fn loss(kind: LossKind) -> LossConfig {
        LossConfig::new(
            kind,
            MaskSpec::Bsm {
                shape: GridShape::new(2, 4).unwrap(),
                patch_radius: 1,
            },
        )
    }

    fn net() -> Autoencoder<f64> {
        Autoencoder::standard(8, &[16, 4, 16], &mut RngStream::new(1, 0)).unwrap()
    }

    #[test]
    fn zero_epochs_is_noop() {
        let n = net();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, log) = train(n.clone(), &data(4, 8, 0), &loss(LossKind::Mse), &cfg, &RngStream::new(0, 0)).unwrap();
        assert_eq!(out.flatten(), n.flatten());
        assert!(log.epoch_loss.is_empty());
    }

    #[test]
    fn mse_training_reduces_loss() {
        let xs = data(32, 8, 2);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            ..Default::default()
        };
        let (_, log) = train(net(), &xs, &loss(LossKind::Mse), &cfg, &RngStream::new(3, 0)).unwrap();
        assert!(log.last().unwrap() < log.epoch_loss[0]);
    }

    #[test]
    fn deterministic_log() {
        let xs = data(16, 8, 4);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            ..Default::default()
        };
        for kind in LossKind::ALL {
            let rng = RngStream::new(5, 0);
            let a = train(net(), &xs, &loss(kind), &cfg, &rng).unwrap();
            let b = train(net(), &xs, &loss(kind), &cfg, &rng).unwrap();
            assert_eq!(a.1, b.1, "{kind}");
            assert_eq!(a.0.flatten(), b.0.flatten());
        }
    }

    #[test]
    fn full_batch_permutation_invariance() {
        let xs = data(12, 8, 6);
        let mut perm = xs.clone();
        perm.reverse();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 12,
            ..Default::default()
        };
        for kind in [LossKind::Mse, LossKind::Cs] {
            let rng = RngStream::new(7, 0);
            let (_, a) = train(net(), &xs, &loss(kind), &cfg, &rng).unwrap();
            let (_, b) = train(net(), &perm, &loss(kind), &cfg, &rng).unwrap();
            for (x, y) in a.epoch_loss.iter().zip(&b.epoch_loss) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{kind}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn divergence_reported() {
        let xs: Vec<Signal<f64>> = (0..4).map(|_| Signal::filled(8, 1e200)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            optimizer: OptimizerSpec {
                kind: super::super::OptimizerKind::Sgd,
                learning_rate: 1e10,
                ..Default::default()
            },
        };
        let err = train(net(), &xs, &loss(LossKind::Mse), &cfg, &RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, last_good_epoch: None }), "{err}");
    }

    #[test]
    fn input_validation() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train(net(), &data(2, 8, 0), &loss(LossKind::Mse), &cfg, &RngStream::new(0, 0)).is_err());
        assert!(train(net(), &[], &loss(LossKind::Mse), &TrainConfig::default(), &RngStream::new(0, 0)).is_err());
        assert!(train(net(), &data(2, 5, 0), &loss(LossKind::Mse), &TrainConfig::default(), &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        shuffle(&mut v, &mut RngStream::new(1, 1));
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
