use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Autoencoder, Dense};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dcs-autoencoder/1";

/// JSON checkpoint: layer dims, per-layer activation, row-major weights and
/// biases, and a format tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Hash of the configuration that produced the model, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn from_model(net: &Autoencoder<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_dims: net.layer_dims(),
            activations: net.activations(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
            config_hash: None,
        }
    }

    pub fn into_model(self) -> Result<Autoencoder<f64>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let n = self.layer_dims.len().saturating_sub(1);
        if self.activations.len() != n || self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Parse("checkpoint layer counts disagree".into()));
        }
        if let Some(bad) = self.weights.iter().chain(&self.biases).flatten().find(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite parameter {bad}")));
        }
        let layers = self
            .layer_dims
            .windows(2)
            .zip(self.activations)
            .zip(self.weights.into_iter().zip(self.biases))
            .map(|((dims, activation), (weights, bias))| Dense {
                in_dim: dims[0],
                out_dim: dims[1],
                weights,
                bias,
                activation,
            })
            .collect();
        Autoencoder::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
