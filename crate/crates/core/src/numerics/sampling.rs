use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{RngStream, Signal};
use crate::error::{Error, Result};

/// Allowed absolute gap between a mixture's `E[S^2]` and the target variance.
pub const MIXTURE_VARIANCE_TOL: f64 = 1e-9;

#[inline]
pub fn standard_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_standard_normal(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Chi-square law with `dof` degrees of freedom, drawn as
/// `Gamma(shape = dof / 2, scale = 2)`.
#[derive(Clone, Copy, Debug)]
pub struct ChiSquare {
    dof: u64,
    gamma: Gamma<f64>,
}

impl ChiSquare {
    pub fn new(dof: u64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::invalid("chi-square needs at least one degree of freedom"));
        }
        let gamma = Gamma::new(dof as f64 / 2.0, 2.0)
            .map_err(|e| Error::invalid(format!("gamma({dof}/2, 2): {e}")))?;
        Ok(Self { dof, gamma })
    }

    pub fn dof(&self) -> u64 {
        self.dof
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        self.gamma.sample(rng)
    }
}

pub fn sample_chi_square(rng: &mut RngStream, dof: u64, n: usize) -> Result<Vec<f64>> {
    let chi = ChiSquare::new(dof)?;
    Ok((0..n).map(|_| chi.sample(rng)).collect())
}

/// Finite discrete distribution over positive noise scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMixture {
    scales: Vec<f64>,
    /// Normalized to sum to one.
    weights: Vec<f64>,
}

impl ScaleMixture {
    pub fn new(scales: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("scale mixture needs at least one scale".into()));
        }
        if scales.len() != weights.len() {
            return Err(Error::Config(format!(
                "scale mixture has {} scales but {} weights",
                scales.len(),
                weights.len()
            )));
        }
        if scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config("mixture scales must be finite and positive".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("mixture weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("mixture weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { scales, weights })
    }

    /// Equal-weight mixture over `scales`.
    pub fn uniform(scales: Vec<f64>) -> Result<Self> {
        let n = scales.len();
        Self::new(scales, vec![1.0; n])
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[S^2]`.
    pub fn second_moment(&self) -> f64 {
        self.scales
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * s * s)
            .sum()
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (s, w) in self.scales.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *s;
            }
        }
        *self.scales.last().expect("nonempty")
    }
}

/// Isotropic zero-mean noise law with per-coordinate variance `sigma^2`:
/// either Gaussian, or a Gaussian scale mixture `S * z` with `z ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    Mixture { sigma: f64, mixture: ScaleMixture },
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Gaussian { sigma })
    }

    /// Fails unless `E[S^2]` equals `sigma^2` to within [`MIXTURE_VARIANCE_TOL`].
    pub fn mixture(sigma: f64, mixture: ScaleMixture) -> Result<Self> {
        check_sigma(sigma)?;
        let m2 = mixture.second_moment();
        if (m2 - sigma * sigma).abs() > MIXTURE_VARIANCE_TOL {
            return Err(Error::Config(format!(
                "scale mixture has E[S^2] = {m2}, expected sigma^2 = {}",
                sigma * sigma
            )));
        }
        Ok(Self::Mixture { sigma, mixture })
    }

    /// Mixture whose target variance is its own second moment.
    pub fn from_mixture(mixture: ScaleMixture) -> Result<Self> {
        let sigma = mixture.second_moment().sqrt();
        Self::mixture(sigma, mixture)
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Self::Gaussian { sigma } | Self::Mixture { sigma, .. } => *sigma,
        }
    }

    /// Scale for one vector draw.
    pub(crate) fn draw_scale(&self, rng: &mut RngStream) -> f64 {
        match self {
            Self::Gaussian { sigma } => *sigma,
            Self::Mixture { mixture, .. } => mixture.draw(rng),
        }
    }

    /// Writes one draw into `out`.
    pub(crate) fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        let scale = self.draw_scale(rng);
        for v in out.iter_mut() {
            *v = scale * standard_normal(rng);
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("noise sigma must be positive, got {sigma}")));
    }
    Ok(())
}

pub fn sample_isotropic_noise(rng: &mut RngStream, dim: usize, noise: &NoiseModel) -> Signal<f64> {
    let mut out = vec![0.0; dim];
    noise.fill(rng, &mut out);
    Signal::from_vec_unchecked(out)
}
