use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Autoencoder, Gradients};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Parse(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with its moment accumulators, laid out like
/// [`Autoencoder::flatten`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    spec: OptimizerSpec,
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: OptimizerSpec, net: &Autoencoder<T>) -> Result<Self> {
        if !(spec.learning_rate.is_finite() && spec.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                spec.learning_rate
            )));
        }
        if !((0.0..1.0).contains(&spec.beta1) && (0.0..1.0).contains(&spec.beta2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        let n = match spec.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => net.parameter_count(),
        };
        Ok(Self {
            spec,
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
            step: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Autoencoder<T>, grads: &Gradients<T>) {
        self.step += 1;
        let lr = T::lit(self.spec.learning_rate);
        match self.spec.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in net.iter_params_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::lit(self.spec.beta1);
                let b2 = T::lit(self.spec.beta2);
                let eps = T::lit(self.spec.epsilon);
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let moments = self.first.iter_mut().zip(self.second.iter_mut());
                for ((p, &g), (m, v)) in net.iter_params_mut().zip(grads.iter()).zip(moments) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
