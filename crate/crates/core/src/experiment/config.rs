use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind, DEFAULT_ETA};
use crate::masking::{GridShape, MaskSpec, DEFAULT_PATCH_RADIUS, DEFAULT_RHO};
use crate::model::{Activation, OptimizerKind, OptimizerSpec, ProbeConfig, TrainConfig, DEFAULT_HIDDEN};
use crate::numerics::{NoiseModel, ScaleMixture};
use crate::weights::{DEFAULT_K_FLOOR, DEFAULT_TRAIN_SAMPLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Mixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Bsm,
    TauAmn,
}

/// Flat `key = value` experiment description.
///
/// Every field except `seeds` and `output` has a default. The text form
/// lists every key in a fixed order and parses back to an equal value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,

    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Gaussian bumps per class template.
    pub template_bumps: usize,
    /// Bump standard deviation in pixels.
    pub bump_width: f64,
    pub baseline: f64,
    pub class_amplitude: f64,
    /// Shared bumps mixed into every sample with random weights.
    pub nuisance_bumps: usize,
    pub nuisance_amplitude: f64,

    pub noise: NoiseKind,
    /// Relative scales; rescaled so that `E[S^2] = sigma^2`.
    pub mixture_scales: Vec<f64>,
    pub mixture_weights: Vec<f64>,
    pub sigmas: Vec<f64>,

    pub mask: MaskKind,
    pub rho: f64,
    pub patch_radius: usize,
    pub delta: usize,

    pub losses: Vec<LossKind>,
    pub eta: f64,
    pub n_mc: usize,
    pub k_floor: f64,

    /// Hidden widths; the default code width equals the default class count.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Activation of the code layer, the first narrowest hidden layer.
    pub code_activation: Activation,
    pub output_activation: Activation,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,

    pub probe_iterations: usize,
    pub probe_learning_rate: f64,
    pub probe_l2: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = OptimizerSpec::default();
        let probe = ProbeConfig::default();
        Self {
            seeds: None,
            output: None,
            n_train: 2000,
            n_test: 500,
            height: 16,
            width: 16,
            classes: 4,
            template_bumps: 3,
            bump_width: 2.0,
            baseline: 0.0,
            class_amplitude: 0.8,
            nuisance_bumps: 6,
            nuisance_amplitude: 0.2,
            noise: NoiseKind::Gaussian,
            mixture_scales: vec![0.5, 1.5],
            mixture_weights: vec![1.0, 1.0],
            sigmas: vec![0.01, 0.1, 0.3, 0.5, 0.7],
            mask: MaskKind::Bsm,
            rho: DEFAULT_RHO,
            patch_radius: DEFAULT_PATCH_RADIUS,
            delta: 2,
            losses: vec![LossKind::Mse, LossKind::Cs, LossKind::N2v, LossKind::Dcs],
            eta: DEFAULT_ETA,
            n_mc: DEFAULT_TRAIN_SAMPLES,
            k_floor: DEFAULT_K_FLOOR,
            hidden: DEFAULT_HIDDEN.to_vec(),
            hidden_activation: Activation::Relu,
            code_activation: Activation::Identity,
            output_activation: Activation::Identity,
            optimizer: opt.kind,
            learning_rate: opt.learning_rate,
            beta1: opt.beta1,
            beta2: opt.beta2,
            adam_epsilon: opt.epsilon,
            epochs: 100,
            batch_size: 64,
            probe_iterations: probe.iterations,
            probe_learning_rate: probe.learning_rate,
            probe_l2: probe.l2,
        }
    }
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn float_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| parse_one(key, s.trim()))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

impl ExperimentConfig {
    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(seeds) = &self.seeds {
            kv("seeds", list(seeds));
        }
        if let Some(path) = &self.output {
            kv("output", path.display().to_string());
        }
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        kv("height", self.height.to_string());
        kv("width", self.width.to_string());
        kv("classes", self.classes.to_string());
        kv("template_bumps", self.template_bumps.to_string());
        kv("bump_width", format!("{:?}", self.bump_width));
        kv("baseline", format!("{:?}", self.baseline));
        kv("class_amplitude", format!("{:?}", self.class_amplitude));
        kv("nuisance_bumps", self.nuisance_bumps.to_string());
        kv("nuisance_amplitude", format!("{:?}", self.nuisance_amplitude));
        kv(
            "noise",
            match self.noise {
                NoiseKind::Gaussian => "gaussian",
                NoiseKind::Mixture => "mixture",
            }
            .into(),
        );
        kv("mixture_scales", float_list(&self.mixture_scales));
        kv("mixture_weights", float_list(&self.mixture_weights));
        kv("sigmas", float_list(&self.sigmas));
        kv(
            "mask",
            match self.mask {
                MaskKind::Bsm => "bsm",
                MaskKind::TauAmn => "tau-amn",
            }
            .into(),
        );
        kv("rho", format!("{:?}", self.rho));
        kv("patch_radius", self.patch_radius.to_string());
        kv("delta", self.delta.to_string());
        kv("losses", list(&self.losses));
        kv("eta", format!("{:?}", self.eta));
        kv("n_mc", self.n_mc.to_string());
        kv("k_floor", format!("{:?}", self.k_floor));
        kv("hidden", list(&self.hidden));
        kv("hidden_activation", self.hidden_activation.to_string());
        kv("code_activation", self.code_activation.to_string());
        kv("output_activation", self.output_activation.to_string());
        kv("optimizer", self.optimizer.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("beta1", format!("{:?}", self.beta1));
        kv("beta2", format!("{:?}", self.beta2));
        kv("adam_epsilon", format!("{:?}", self.adam_epsilon));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("probe_iterations", self.probe_iterations.to_string());
        kv("probe_learning_rate", format!("{:?}", self.probe_learning_rate));
        kv("probe_l2", format!("{:?}", self.probe_l2));
        out
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seeds" => self.seeds = Some(parse_list(key, v)?),
            "output" => self.output = Some(PathBuf::from(v)),
            "n_train" => self.n_train = parse_one(key, v)?,
            "n_test" => self.n_test = parse_one(key, v)?,
            "height" => self.height = parse_one(key, v)?,
            "width" => self.width = parse_one(key, v)?,
            "classes" => self.classes = parse_one(key, v)?,
            "template_bumps" => self.template_bumps = parse_one(key, v)?,
            "bump_width" => self.bump_width = parse_one(key, v)?,
            "baseline" => self.baseline = parse_one(key, v)?,
            "class_amplitude" => self.class_amplitude = parse_one(key, v)?,
            "nuisance_bumps" => self.nuisance_bumps = parse_one(key, v)?,
            "nuisance_amplitude" => self.nuisance_amplitude = parse_one(key, v)?,
            "noise" => {
                self.noise = match v {
                    "gaussian" => NoiseKind::Gaussian,
                    "mixture" => NoiseKind::Mixture,
                    other => return Err(Error::Parse(format!("noise: unknown kind {other:?}"))),
                }
            }
            "mixture_scales" => self.mixture_scales = parse_list(key, v)?,
            "mixture_weights" => self.mixture_weights = parse_list(key, v)?,
            "sigmas" => self.sigmas = parse_list(key, v)?,
            "mask" => {
                self.mask = match v {
                    "bsm" => MaskKind::Bsm,
                    "tau-amn" => MaskKind::TauAmn,
                    other => return Err(Error::Parse(format!("mask: unknown kind {other:?}"))),
                }
            }
            "rho" => self.rho = parse_one(key, v)?,
            "patch_radius" => self.patch_radius = parse_one(key, v)?,
            "delta" => self.delta = parse_one(key, v)?,
            "losses" => self.losses = parse_list(key, v)?,
            "eta" => self.eta = parse_one(key, v)?,
            "n_mc" => self.n_mc = parse_one(key, v)?,
            "k_floor" => self.k_floor = parse_one(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "hidden_activation" => self.hidden_activation = parse_one(key, v)?,
            "code_activation" => self.code_activation = parse_one(key, v)?,
            "output_activation" => self.output_activation = parse_one(key, v)?,
            "optimizer" => self.optimizer = parse_one(key, v)?,
            "learning_rate" => self.learning_rate = parse_one(key, v)?,
            "beta1" => self.beta1 = parse_one(key, v)?,
            "beta2" => self.beta2 = parse_one(key, v)?,
            "adam_epsilon" => self.adam_epsilon = parse_one(key, v)?,
            "epochs" => self.epochs = parse_one(key, v)?,
            "batch_size" => self.batch_size = parse_one(key, v)?,
            "probe_iterations" => self.probe_iterations = parse_one(key, v)?,
            "probe_learning_rate" => self.probe_learning_rate = parse_one(key, v)?,
            "probe_l2" => self.probe_l2 = parse_one(key, v)?,
            other => return Err(Error::Parse(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height * self.width < 4 {
            return bad("signal dimension height*width must be at least 4".into());
        }
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be a nonempty list of values >= 0".into());
        }
        if self.losses.is_empty() {
            return bad("losses must not be empty".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list positive widths".into());
        }
        if self.noise == NoiseKind::Mixture {
            ScaleMixture::new(self.mixture_scales.clone(), self.mixture_weights.clone())?;
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return bad("seeds must not be empty".into());
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    /// First 16 hex digits of the SHA-256 of [`to_text`](Self::to_text),
    /// leaving out `output` since it does not affect results.
    pub fn hash(&self) -> String {
        let content = Self {
            output: None,
            ..self.clone()
        };
        let digest = Sha256::digest(content.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<GridShape> {
        GridShape::new(self.height, self.width)
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        Ok(match self.mask {
            MaskKind::Bsm => MaskSpec::Bsm {
                shape: self.grid()?,
                patch_radius: self.patch_radius,
            },
            MaskKind::TauAmn => MaskSpec::TauAmn { delta: self.delta },
        })
    }

    pub fn loss_config(&self, kind: LossKind) -> Result<LossConfig> {
        Ok(LossConfig {
            kind,
            mask: self.mask_spec()?,
            rho: self.rho,
            eta: self.eta,
            n_mc: self.n_mc,
            k_floor: self.k_floor,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerSpec {
                kind: self.optimizer,
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            iterations: self.probe_iterations,
            learning_rate: self.probe_learning_rate,
            l2: self.probe_l2,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dim()];
        dims.extend(&self.hidden);
        dims.push(self.dim());
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        let mut acts = vec![self.hidden_activation; self.hidden.len()];
        let narrowest = self.hidden.iter().min().copied().unwrap_or(0);
        if let Some(code) = self.hidden.iter().position(|&w| w == narrowest) {
            acts[code] = self.code_activation;
        }
        acts.push(self.output_activation);
        acts
    }

    /// Noise law at `sigma`, or `None` for `sigma == 0`.
    pub fn noise_model(&self, sigma: f64) -> Result<Option<NoiseModel>> {
        if sigma == 0.0 {
            return Ok(None);
        }
        match self.noise {
            NoiseKind::Gaussian => Ok(Some(NoiseModel::gaussian(sigma)?)),
            NoiseKind::Mixture => {
                let rel = ScaleMixture::new(self.mixture_scales.clone(), self.mixture_weights.clone())?;
                let norm = rel.second_moment().sqrt();
                let scales = rel.scales().iter().map(|s| s * sigma / norm).collect();
                let mix = ScaleMixture::new(scales, rel.weights().to_vec())?;
                Ok(Some(NoiseModel::mixture(sigma, mix)?))
            }
        }
    }
}
