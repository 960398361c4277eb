//! Signal-to-noise ratio and cosine weight estimation.
//!
//! For a clean signal `s` observed twice with independent isotropic noise of
//! per-coordinate variance `σ²`, the SN ratio is `c = ‖s‖ / (σ √D)`. It is
//! estimated from a single pair `(x, x̃)` by
//!
//! ```text
//! ĉ = sqrt(2 · max(xᵀx̃, 0)) / ‖x − x̃‖
//! ```
//!
//! and the weight `k_D(c) = E[(κ/√D + c) / sqrt((κ/√D + c)² + ν/D)]` with
//! `κ ~ N(0, 1)`, `ν ~ χ²_{D−1}` is then evaluated by Monte Carlo at `ĉ`.
//! For large `D` the weight tends to `c / sqrt(c² + 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskedPair;
use crate::numerics::{dot_slice, norm2_slice, standard_normal, ChiSquare, NoiseModel, RngStream, Signal};
use crate::scalar::Scalar;

/// Monte Carlo draws used for the weight during training.
pub const DEFAULT_TRAIN_SAMPLES: usize = 128;
/// Monte Carlo draws used by oracles.
pub const DEFAULT_ORACLE_SAMPLES: usize = 100_000;
/// Lower clamp applied to `k̂` before dividing a loss by it.
pub const DEFAULT_K_FLOOR: f64 = 0.05;

/// Weight estimate `k̂` at a given `ĉ`, with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub c_hat: f64,
    pub k_hat: f64,
    pub n_samples: usize,
    /// Sample standard deviation of the summands over `√n_samples`.
    pub std_error: f64,
}

impl WeightEstimate {
    /// `max(k_hat, floor)`.
    pub fn floored(&self, floor: f64) -> f64 {
        self.k_hat.max(floor)
    }
}

/// `ĉ` over all coordinates of `(x, x̃)`.
pub fn estimate_c<T: Scalar>(x: &[T], x_tilde: &[T]) -> Result<f64> {
    if x.len() != x_tilde.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            actual: x_tilde.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("pair"));
    }
    let mut cross = 0.0f64;
    let mut diff_sq = 0.0f64;
    for (&a, &b) in x.iter().zip(x_tilde) {
        let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
        cross += a * b;
        diff_sq += (a - b) * (a - b);
    }
    if diff_sq == 0.0 {
        return Err(Error::Degenerate("x and x_tilde coincide"));
    }
    Ok((2.0 * cross.max(0.0)).sqrt() / diff_sq.sqrt())
}

/// `ĉ` over the mask support of a pair, i.e. on `b ⊙ x` and `b ⊙ x̃`.
pub fn estimate_c_masked<T: Scalar>(pair: &MaskedPair<T>) -> Result<f64> {
    let (x, xt) = pair.masked_subvectors();
    estimate_c(&x, &xt)
}

/// Summand of the weight estimator for one `(κ, ν)` draw.
#[inline]
pub fn weight_summand(c_hat: f64, dim: usize, kappa: f64, nu: f64) -> f64 {
    let d = dim as f64;
    let a = c_hat + kappa / d.sqrt();
    let denom = (a * a + nu / d).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a / denom
    }
}

/// Monte Carlo estimate of the weight at `ĉ` in dimension `dim`.
pub fn estimate_k_mc(
    rng: &mut RngStream,
    c_hat: f64,
    dim: usize,
    n_samples: usize,
) -> Result<WeightEstimate> {
    if dim < 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive"));
    }
    if !(c_hat.is_finite() && c_hat >= 0.0) {
        return Err(Error::invalid(format!("c_hat must be finite and >= 0, got {c_hat}")));
    }
    let chi = ChiSquare::new(dim as u64 - 1)?;
    let mut stats = RunningMoments::default();
    for _ in 0..n_samples {
        let kappa = standard_normal(rng);
        let nu = chi.sample(rng);
        stats.push(weight_summand(c_hat, dim, kappa, nu));
    }
    Ok(WeightEstimate {
        c_hat,
        k_hat: stats.mean(),
        n_samples,
        std_error: stats.std_error(),
    })
}

/// Large-dimension limit of the weight, `c / sqrt(c² + 1)`.
pub fn k_closed_form(c: f64) -> f64 {
    if c.is_infinite() {
        return 1.0;
    }
    c / (c * c + 1.0).sqrt()
}

/// Brute-force Monte Carlo of `E[⟨s + ε, u⟩ / ‖s + ε‖]` with `u = s / ‖s‖`
/// (or `e₁` when `s = 0`), sampling the full `D`-dimensional noise vector.
///
/// Work is split into fixed chunks on streams derived from `rng`, so the
/// result does not depend on the thread count.
pub fn k_oracle_isotropic(
    rng: &RngStream,
    s: &Signal<f64>,
    noise: &NoiseModel,
    n_samples: usize,
) -> OracleEstimate {
    let dim = s.dim();
    let norm = norm2_slice(s.as_slice());
    let dir: Vec<f64> = if norm > 0.0 {
        s.iter().map(|v| v / norm).collect()
    } else {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        e
    };
    let parts = chunked_moments(rng, n_samples, |stream, count, acc| {
        let mut eps = vec![0.0; dim];
        for _ in 0..count {
            noise.fill(stream, &mut eps);
            let mut sq = 0.0;
            let mut along = 0.0;
            for ((e, &sv), &u) in eps.iter().zip(s.iter()).zip(&dir) {
                let v = sv + e;
                sq += v * v;
                along += v * u;
            }
            acc.push(if sq > 0.0 { along / sq.sqrt() } else { 0.0 });
        }
    });
    OracleEstimate {
        mean: parts.mean(),
        std_error: parts.std_error(),
        n_samples,
    }
}

/// Mean with standard error from a Monte Carlo oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Validity region of [`snr_error_bound`]: `delta < max_delta` and `dim >= min_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDomain {
    pub max_delta: f64,
    pub min_dim: f64,
}

impl BoundDomain {
    pub fn new(c: f64, sigma_bar_sq: f64, sigma_sq: f64, delta: f64) -> Self {
        let max_delta = (8.0 * (-c * c / 4.0).exp()).min(1.0);
        let root = 12.0 / (c * c).min(1.0) * (sigma_bar_sq / sigma_sq) * (12.0 / delta).ln();
        Self {
            max_delta,
            min_dim: root * root,
        }
    }

    pub fn contains(&self, delta: f64, dim: usize) -> bool {
        delta > 0.0 && delta < self.max_delta && dim as f64 >= self.min_dim
    }
}

/// High-probability bound on `|c − ĉ|`:
/// `12 (σ̄²/σ²) (c + 1/c) log(12/δ) / √D`, holding with probability
/// above `1 − δ` inside [`BoundDomain`].
pub fn snr_error_bound(c: f64, sigma_bar_sq: f64, sigma_sq: f64, delta: f64, dim: usize) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("bound needs c > 0, got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sigma_sq > 0.0 && sigma_bar_sq >= sigma_sq) {
        return Err(Error::invalid("need 0 < sigma^2 <= sigma_bar^2"));
    }
    if dim == 0 {
        return Err(Error::UnsupportedDimension(dim));
    }
    Ok(12.0 * (sigma_bar_sq / sigma_sq) * (c + 1.0 / c) * (12.0 / delta).ln() / (dim as f64).sqrt())
}

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct RunningMoments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }

    #[cfg(test)]
    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

const CHUNK: usize = 4096;

/// Splits `n` draws into fixed-size chunks, each on its own derived stream,
/// runs them in parallel and merges the moments in chunk order.
pub(crate) fn chunked_moments<F>(rng: &RngStream, n: usize, body: F) -> RunningMoments
where
    F: Fn(&mut RngStream, usize, &mut RunningMoments) + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<RunningMoments> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng.derive(i as u64);
            let count = CHUNK.min(n - i * CHUNK);
            let mut acc = RunningMoments::default();
            body(&mut stream, count, &mut acc);
            acc
        })
        .collect();
    parts.into_iter().fold(RunningMoments::default(), RunningMoments::merge)
}

/// Per-coordinate variant of [`chunked_moments`] for `width` statistics.
pub(crate) fn chunked_vector_moments<F>(rng: &RngStream, n: usize, width: usize, body: F) -> Vec<RunningMoments>
where
    F: Fn(&mut RngStream, usize, &mut [RunningMoments]) + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<RunningMoments>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng.derive(i as u64);
            let count = CHUNK.min(n - i * CHUNK);
            let mut acc = vec![RunningMoments::default(); width];
            body(&mut stream, count, &mut acc);
            acc
        })
        .collect();
    parts.into_iter().fold(vec![RunningMoments::default(); width], |a, b| {
        a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
    })
}

/// Cosine of the angle between two slices, `0` if either is zero.
pub(crate) fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let den = norm2_slice(u) * norm2_slice(v);
    if den == 0.0 {
        0.0
    } else {
        dot_slice(u, v) / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::MaskVec;

    #[test]
    fn c_hat_formula() {
        let c = estimate_c(&[3.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((c - 6f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((c - 1.22474).abs() < 1e-5);
        assert_eq!(estimate_c(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn c_hat_degenerate() {
        assert!(matches!(
            estimate_c(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_c(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn c_hat_uses_mask_support() {
        let x = Signal::new(vec![3.0, 100.0, 0.0]).unwrap();
        let xt = Signal::new(vec![1.0, 100.0, 0.0]).unwrap();
        let mask = MaskVec::from_bits(vec![true, false, true], 0.5).unwrap();
        let pair = MaskedPair::new(x, xt, mask).unwrap();
        let c = estimate_c_masked(&pair).unwrap();
        assert!((c - 6f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(k_closed_form(0.0), 0.0);
        assert!((k_closed_form(1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((k_closed_form(1e8) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn k_mc_rejects_small_dim() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            estimate_k_mc(&mut rng, 1.0, 1, 10),
            Err(Error::UnsupportedDimension(1))
        ));
        assert!(estimate_k_mc(&mut rng, -1.0, 4, 10).is_err());
        assert!(estimate_k_mc(&mut rng, 1.0, 4, 0).is_err());
    }

    #[test]
    fn k_mc_zero_snr() {
        let mut rng = RngStream::new(1, 0);
        for dim in [2, 10, 1000] {
            let w = estimate_k_mc(&mut rng, 0.0, dim, 20_000).unwrap();
            assert!(w.k_hat.abs() <= 3.0 * w.std_error, "{w:?}");
        }
    }

    #[test]
    fn k_mc_large_snr() {
        let mut rng = RngStream::new(2, 0);
        let w = estimate_k_mc(&mut rng, 100.0, 1024, 10_000).unwrap();
        assert!((w.k_hat - 1.0).abs() < 1e-3);
        assert!((w.k_hat - 100.0 / 10001f64.sqrt()).abs() < 1e-3);
        assert!(w.k_hat.abs() <= 1.0);
    }

    #[test]
    fn k_mc_high_dim_matches_limit() {
        let mut rng = RngStream::new(3, 0);
        let w = estimate_k_mc(&mut rng, 1.0, 1_000_000, 100_000).unwrap();
        assert!((w.k_hat - std::f64::consts::FRAC_1_SQRT_2).abs() < 5e-3, "{w:?}");
    }

    #[test]
    fn std_error_matches_summands() {
        let mut rng = RngStream::new(4, 0);
        let w = estimate_k_mc(&mut rng.clone(), 0.7, 16, 500).unwrap();
        let chi = ChiSquare::new(15).unwrap();
        let xs: Vec<f64> = (0..500)
            .map(|_| {
                let k = standard_normal(&mut rng);
                let n = chi.sample(&mut rng);
                weight_summand(0.7, 16, k, n)
            })
            .collect();
        let m = xs.iter().sum::<f64>() / 500.0;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 499.0).sqrt();
        assert!((w.k_hat - m).abs() < 1e-12);
        assert!((w.std_error - sd / 500f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bound_arithmetic() {
        let b = snr_error_bound(1.0, 1.0, 1.0, 0.1, 10_000).unwrap();
        assert!((b - 24.0 * 120f64.ln() / 100.0).abs() < 1e-12);
        assert!((b - 1.1490).abs() < 1e-4);
        let b2 = snr_error_bound(1.0, 1.0, 1.0, 0.1, 20_000).unwrap();
        assert!((b / b2 - 2f64.sqrt()).abs() < 1e-12);
        assert!(snr_error_bound(0.0, 1.0, 1.0, 0.1, 100).is_err());
    }

    #[test]
    fn bound_domain() {
        let dom = BoundDomain::new(1.0, 1.0, 1.0, 0.1);
        assert_eq!(dom.max_delta, 1.0);
        let expect = (12.0 * 120f64.ln()).powi(2);
        assert!((dom.min_dim - expect).abs() < 1e-9);
        assert!(dom.contains(0.1, 4096));
        assert!(!dom.contains(0.1, 1024));
        // max_delta drops below 1 once c^2 > 4 ln 8
        let far = BoundDomain::new(3.0, 1.0, 1.0, 0.1);
        assert!(far.max_delta < 1.0);
    }

    #[test]
    fn oracle_zero_signal() {
        let s = Signal::zeros(6);
        let noise = NoiseModel::gaussian(1.0).unwrap();
        let est = k_oracle_isotropic(&RngStream::new(5, 0), &s, &noise, 100_000);
        assert!(est.mean.abs() <= 3.0 / (est.n_samples as f64).sqrt());
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = RunningMoments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = RunningMoments::default();
        let mut b = RunningMoments::default();
        xs[..300].iter().for_each(|&x| a.push(x));
        xs[300..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert_eq!(m.count(), 1000);
        assert!((m.mean() - all.mean()).abs() < 1e-12);
        assert!((m.variance() - all.variance()).abs() < 1e-9);
    }
}
