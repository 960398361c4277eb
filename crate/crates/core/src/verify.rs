//! Monte Carlo verification harness.
//!
//! Each check turns one property of the estimators and losses into a set of
//! [`VerificationReport`]s. A report records the configuration it was run
//! with, so [`rerun`] reproduces its statistic bit for bit. Monte Carlo
//! tolerances are multiples of the estimated standard error; exact
//! identities use a fixed relative tolerance of `1e-12`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::losses::DEFAULT_ETA;
use crate::masking::{blind_spot_with_mask, draw_mask, GridShape, MaskVec};
use crate::model::{Activation, Autoencoder};
use crate::numerics::{
    dot_slice, norm2_slice, standard_normal, NoiseModel, RngStream, ScaleMixture, Signal,
};
use crate::weights::{
    chunked_moments, chunked_vector_moments, estimate_c, k_closed_form, k_oracle_isotropic, BoundDomain,
    RunningMoments,
};

/// Which side of the threshold passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

impl Direction {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Direction::AtMost => statistic <= threshold,
            Direction::AtLeast => statistic >= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_id: String,
    /// Full configuration of the check run, including its seed.
    pub config: Value,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub passed: bool,
    /// `false` for informational results that do not gate the exit status.
    pub asserted: bool,
    pub details: Value,
}

impl VerificationReport {
    fn new(
        check_id: impl Into<String>,
        config: &impl Serialize,
        statistic: f64,
        threshold: f64,
        direction: Direction,
        details: Value,
    ) -> Self {
        Self {
            check_id: check_id.into(),
            config: serde_json::to_value(config).expect("configs serialize"),
            statistic,
            threshold,
            direction,
            passed: direction.holds(statistic, threshold),
            asserted: true,
            details,
        }
    }

    fn informational(mut self) -> Self {
        self.asserted = false;
        self
    }

    /// Family part of the id, before the first `/`.
    pub fn family(&self) -> &str {
        self.check_id.split('/').next().unwrap_or_default()
    }
}

/// True when every asserted report passed.
pub fn all_asserted_passed(reports: &[VerificationReport]) -> bool {
    reports.iter().filter(|r| r.asserted).all(|r| r.passed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckId {
    Collinearity,
    MaskedIdentity,
    SnrDecay,
    WeightLimit,
    N2vEquivalence,
    RankCorrelation,
}

impl CheckId {
    pub const ALL: [CheckId; 6] = [
        CheckId::Collinearity,
        CheckId::MaskedIdentity,
        CheckId::SnrDecay,
        CheckId::WeightLimit,
        CheckId::N2vEquivalence,
        CheckId::RankCorrelation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckId::Collinearity => "collinearity",
            CheckId::MaskedIdentity => "masked-identity",
            CheckId::SnrDecay => "snr-decay",
            CheckId::WeightLimit => "weight-limit",
            CheckId::N2vEquivalence => "n2v-equivalence",
            CheckId::RankCorrelation => "rank-correlation",
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown check {s:?}")))
    }
}

/// Parses `all` or a comma-separated list of check ids.
pub fn parse_selection(s: &str) -> Result<Vec<CheckId>> {
    if s == "all" {
        return Ok(CheckId::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Runs one check family with its default configuration at `seed`.
pub fn run_check(id: CheckId, seed: u64) -> Result<Vec<VerificationReport>> {
    match id {
        CheckId::Collinearity => check_collinearity(&CollinearityConfig::new(seed)),
        CheckId::MaskedIdentity => check_masked_identity(&MaskedIdentityConfig::new(seed)),
        CheckId::SnrDecay => check_snr_decay(&SnrDecayConfig::new(seed)),
        CheckId::WeightLimit => check_weight_limit(&WeightLimitConfig::new(seed)),
        CheckId::N2vEquivalence => check_n2v_equivalence(&N2vConfig::new(seed)),
        CheckId::RankCorrelation => check_rank_correlation(&RankCorrelationConfig::new(seed)),
    }
}

/// Runs the selected families concurrently; reports keep selection order.
pub fn run_checks(ids: &[CheckId], seed: u64) -> Result<Vec<VerificationReport>> {
    let parts: Vec<Vec<VerificationReport>> = ids
        .par_iter()
        .map(|&id| run_check(id, seed))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Re-runs the family that produced `report` from its recorded config.
pub fn rerun(report: &VerificationReport) -> Result<Vec<VerificationReport>> {
    let cfg = report.config.clone();
    match report.family().parse::<CheckId>()? {
        CheckId::Collinearity => check_collinearity(&serde_json::from_value(cfg)?),
        CheckId::MaskedIdentity => check_masked_identity(&serde_json::from_value(cfg)?),
        CheckId::SnrDecay => check_snr_decay(&serde_json::from_value(cfg)?),
        CheckId::WeightLimit => check_weight_limit(&serde_json::from_value(cfg)?),
        CheckId::N2vEquivalence => check_n2v_equivalence(&serde_json::from_value(cfg)?),
        CheckId::RankCorrelation => check_rank_correlation(&serde_json::from_value(cfg)?),
    }
}

fn root(seed: u64, id: CheckId) -> RngStream {
    RngStream::new(seed, 0).derive_named(id.as_str())
}

fn cs_value(u: &[f64], v: &[f64]) -> f64 {
    -dot_slice(u, v) / (norm2_slice(u) * norm2_slice(v)).max(DEFAULT_ETA)
}

/// Fixed direction with distinct coordinates, scaled to `norm`.
fn ramp(dim: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|d| 1.0 + d as f64).collect();
    let n = norm2_slice(&v);
    v.into_iter().map(|x| x * norm / n).collect()
}

/// Noise law spec shared by check configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Mixture { scales: Vec<f64>, weights: Vec<f64> },
}

impl NoiseSpec {
    pub fn model(&self) -> Result<NoiseModel> {
        match self {
            NoiseSpec::Gaussian { sigma } => NoiseModel::gaussian(*sigma),
            NoiseSpec::Mixture { scales, weights } => {
                NoiseModel::from_mixture(ScaleMixture::new(scales.clone(), weights.clone())?)
            }
        }
    }
}

// ---------------------------------------------------------------- collinearity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearityCase {
    pub name: String,
    pub dim: usize,
    pub signal_norm: f64,
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearityConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub oracle_samples: usize,
    pub cases: Vec<CollinearityCase>,
}

impl CollinearityConfig {
    pub fn new(seed: u64) -> Self {
        let case = |name: &str, signal_norm, noise| CollinearityCase {
            name: name.into(),
            dim: 8,
            signal_norm,
            noise,
        };
        Self {
            seed,
            n_samples: 200_000,
            oracle_samples: 200_000,
            cases: vec![
                case("gaussian", 2.0, NoiseSpec::Gaussian { sigma: 1.0 }),
                case("zero-signal", 0.0, NoiseSpec::Gaussian { sigma: 1.0 }),
                // E[S^2] = (0.25 + 1.75) / 2 = 1
                case(
                    "mixture",
                    2.0,
                    NoiseSpec::Mixture {
                        scales: vec![0.5, 1.75f64.sqrt()],
                        weights: vec![1.0, 1.0],
                    },
                ),
            ],
        }
    }
}

/// `E[x/‖x‖]` is parallel to `s` with length equal to the weight.
///
/// Per case: the component of the Monte Carlo mean orthogonal to `s` must be
/// within 4 standard errors (RMS over coordinates) of zero, and the parallel
/// component must match an independent weight oracle within 3 combined
/// standard errors.
pub fn check_collinearity(cfg: &CollinearityConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::Collinearity);
    let mut out = Vec::new();
    for case in &cfg.cases {
        if case.dim < 2 {
            return Err(Error::UnsupportedDimension(case.dim));
        }
        let noise = case.noise.model()?;
        let s = ramp(case.dim, case.signal_norm);
        let dir = if case.signal_norm > 0.0 {
            ramp(case.dim, 1.0)
        } else {
            let mut e = vec![0.0; case.dim];
            e[0] = 1.0;
            e
        };
        let stream = rng.derive_named(&case.name);
        let dim = case.dim;
        // coordinates of x/|x|, then its projection on dir
        let moments = chunked_vector_moments(&stream.derive_named("mean"), cfg.n_samples, dim + 1, |r, n, acc| {
            let mut eps = vec![0.0; dim];
            for _ in 0..n {
                noise.fill(r, &mut eps);
                let x: Vec<f64> = s.iter().zip(&eps).map(|(a, b)| a + b).collect();
                let norm = norm2_slice(&x);
                let mut along = 0.0;
                for (d, &v) in x.iter().enumerate() {
                    let u = v / norm;
                    acc[d].push(u);
                    along += u * dir[d];
                }
                acc[dim].push(along);
            }
        });
        let mean: Vec<f64> = moments[..dim].iter().map(RunningMoments::mean).collect();
        let par = moments[dim].mean();
        let orth: Vec<f64> = mean.iter().zip(&dir).map(|(m, u)| m - par * u).collect();
        let orth_norm = norm2_slice(&orth);
        let mc_sigma = moments[..dim].iter().map(|m| m.std_error().powi(2)).sum::<f64>().sqrt();
        out.push(VerificationReport::new(
            format!("collinearity/{}/orthogonal", case.name),
            cfg,
            orth_norm,
            4.0 * mc_sigma,
            Direction::AtMost,
            json!({ "mean": mean, "mc_sigma": mc_sigma }),
        ));

        let oracle = k_oracle_isotropic(
            &stream.derive_named("oracle"),
            &Signal::new(s.clone())?,
            &noise,
            cfg.oracle_samples,
        );
        let combined = (moments[dim].std_error().powi(2) + oracle.std_error.powi(2)).sqrt();
        out.push(VerificationReport::new(
            format!("collinearity/{}/parallel", case.name),
            cfg,
            (par - oracle.mean).abs(),
            3.0 * combined,
            Direction::AtMost,
            json!({
                "parallel": par,
                "parallel_se": moments[dim].std_error(),
                "k_oracle": oracle.mean,
                "k_oracle_se": oracle.std_error,
            }),
        ));
    }
    Ok(out)
}

// ------------------------------------------------------------- masked identity

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    /// Constant output, independent of the input.
    Constant,
    /// Random two-layer tanh network.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedIdentityCase {
    pub name: String,
    pub map: MapKind,
    pub mask: Vec<bool>,
    /// Noise on the masked input comes from blind-spot replacement on this
    /// grid instead of an independent draw. Reported, not asserted.
    pub blind_spot_grid: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedIdentityConfig {
    pub seed: u64,
    pub dim: usize,
    /// Target SN ratio of the masked clean subvector; sets sigma.
    pub snr: f64,
    pub n_samples: usize,
    pub oracle_samples: usize,
    pub cases: Vec<MaskedIdentityCase>,
}

impl MaskedIdentityConfig {
    pub fn new(seed: u64) -> Self {
        let four = vec![true, false, true, true, false, true];
        let case = |name: &str, map, mask: &Vec<bool>, grid| MaskedIdentityCase {
            name: name.into(),
            map,
            mask: mask.clone(),
            blind_spot_grid: grid,
        };
        Self {
            seed,
            dim: 6,
            snr: 1.0,
            n_samples: 1_000_000,
            oracle_samples: 1_000_000,
            cases: vec![
                case("identity", MapKind::Identity, &four, None),
                case("constant", MapKind::Constant, &four, None),
                case("mlp", MapKind::Mlp, &four, None),
                case("identity-full-mask", MapKind::Identity, &vec![true; 6], None),
                case("mlp-blind-spot", MapKind::Mlp, &four, Some((2, 3))),
            ],
        }
    }
}

enum Map {
    Identity,
    Constant(Vec<f64>),
    Mlp(Autoencoder<f64>),
}

impl Map {
    fn build(kind: MapKind, dim: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(match kind {
            MapKind::Identity => Map::Identity,
            MapKind::Constant => Map::Constant((0..dim).map(|_| standard_normal(rng)).collect()),
            MapKind::Mlp => Map::Mlp(Autoencoder::random(
                &[dim, 2 * dim, dim],
                &[Activation::Tanh, Activation::Identity],
                rng,
            )?),
        })
    }

    fn apply(&self, x: Vec<f64>) -> Vec<f64> {
        match self {
            Map::Identity => x,
            Map::Constant(v) => v.clone(),
            Map::Mlp(net) => net
                .reconstruct(&Signal::new(x).expect("finite input"))
                .expect("dimension checked")
                .into_vec(),
        }
    }
}

/// Clean-target masked cosine loss equals the noisy-target one divided by
/// the weight at the masked clean signal.
///
/// Both sides are estimated from common draws of the input noise; the
/// assertion is on the paired difference, with the weight oracle's error
/// propagated, at 4 standard errors.
pub fn check_masked_identity(cfg: &MaskedIdentityConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::MaskedIdentity);
    let s = ramp(cfg.dim, 1.0);
    let mut out = Vec::new();
    for case in &cfg.cases {
        let mask = MaskVec::from_bits(case.mask.clone(), 0.5)?;
        if mask.dim() != cfg.dim {
            return Err(Error::DimMismatch {
                expected: cfg.dim,
                actual: mask.dim(),
            });
        }
        if mask.count() < 2 {
            out.push(
                VerificationReport::new(
                    format!("masked-identity/{}", case.name),
                    cfg,
                    f64::NAN,
                    f64::NAN,
                    Direction::AtMost,
                    json!({ "skipped": "fewer than 2 masked coordinates" }),
                )
                .informational(),
            );
            continue;
        }
        let bs = mask.restrict(&s);
        let sigma = norm2_slice(&bs) / (cfg.snr * (mask.count() as f64).sqrt());
        let noise = NoiseModel::gaussian(sigma)?;
        let stream = rng.derive_named(&case.name);
        let map = Map::build(case.map, cfg.dim, &mut stream.derive_named("map"))?;
        let k = k_oracle_isotropic(&stream.derive_named("oracle"), &Signal::new(bs.clone())?, &noise, cfg.oracle_samples);
        let grid = case.blind_spot_grid.map(|(h, w)| GridShape::new(h, w)).transpose()?;
        let dim = cfg.dim;
        // [clean-target loss, noisy-target loss, paired difference]
        let m = chunked_vector_moments(&stream.derive_named("draws"), cfg.n_samples, 3, |r, n, acc| {
            let mut eps = vec![0.0; dim];
            let mut eps_t = vec![0.0; dim];
            for _ in 0..n {
                noise.fill(r, &mut eps);
                let x: Vec<f64> = s.iter().zip(&eps).map(|(a, b)| a + b).collect();
                let input = match grid {
                    Some(shape) => {
                        let xs = Signal::new(x.clone()).expect("finite");
                        blind_spot_with_mask(r, &xs, shape, 1, mask.clone())
                            .expect("grid checked")
                            .x_tilde()
                            .as_slice()
                            .to_vec()
                    }
                    None => {
                        noise.fill(r, &mut eps_t);
                        s.iter().zip(&eps_t).map(|(a, b)| a + b).collect()
                    }
                };
                let s_hat = mask.restrict(&map.apply(input));
                let lhs = cs_value(&bs, &s_hat);
                let rhs = cs_value(&mask.restrict(&x), &s_hat);
                acc[0].push(lhs);
                acc[1].push(rhs);
                acc[2].push(lhs - rhs / k.mean);
            }
        });
        let lhs = m[0].mean();
        let rhs = m[1].mean() / k.mean;
        let k_term = m[1].mean().abs() / (k.mean * k.mean) * k.std_error;
        let sigma_comb = (m[2].std_error().powi(2) + k_term.powi(2)).sqrt();
        let report = VerificationReport::new(
            format!("masked-identity/{}", case.name),
            cfg,
            (lhs - rhs).abs(),
            4.0 * sigma_comb,
            Direction::AtMost,
            json!({
                "lhs": lhs,
                "rhs": rhs,
                "k": k.mean,
                "k_se": k.std_error,
                "sigma": sigma,
                "masked_count": mask.count(),
                "combined_se": sigma_comb,
            }),
        );
        out.push(if grid.is_some() { report.informational() } else { report });
    }
    Ok(out)
}

// ------------------------------------------------------------------ snr decay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrDecayConfig {
    pub seed: u64,
    pub snr_grid: Vec<f64>,
    pub dims: Vec<usize>,
    pub trials: usize,
    pub delta: f64,
    pub sigma: f64,
    /// Upper limit on the log-log slope of the median error.
    pub max_slope: f64,
}

impl SnrDecayConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            snr_grid: vec![0.5, 1.0, 2.0],
            dims: vec![64, 256, 1024, 4096, 16384],
            trials: 200,
            delta: 0.1,
            sigma: 1.0,
            max_slope: -0.4,
        }
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// The SN-ratio estimator's error shrinks like `D^{-1/2}`, and its
/// `1 - delta` quantile stays below the high-probability bound wherever the
/// bound applies.
pub fn check_snr_decay(cfg: &SnrDecayConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::SnrDecay);
    let noise = NoiseModel::gaussian(cfg.sigma)?;
    let sigma_sq = cfg.sigma * cfg.sigma;
    let mut out = Vec::new();
    for (ci, &c) in cfg.snr_grid.iter().enumerate() {
        let mut medians = Vec::new();
        for (di, &dim) in cfg.dims.iter().enumerate() {
            let s = ramp(dim, c * cfg.sigma * (dim as f64).sqrt());
            let cell = rng.derive(ci as u64).derive(di as u64);
            let errors: Vec<f64> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut r = cell.derive(t as u64);
                    let mut eps = vec![0.0; dim];
                    noise.fill(&mut r, &mut eps);
                    let x: Vec<f64> = s.iter().zip(&eps).map(|(a, b)| a + b).collect();
                    noise.fill(&mut r, &mut eps);
                    let xt: Vec<f64> = s.iter().zip(&eps).map(|(a, b)| a + b).collect();
                    estimate_c(&x, &xt).map(|ch| (c - ch).abs())
                })
                .collect::<Result<_>>()?;
            let median = quantile(&errors, 0.5);
            medians.push(median);
            let q = quantile(&errors, 1.0 - cfg.delta);
            let domain = BoundDomain::new(c, sigma_sq, sigma_sq, cfg.delta);
            let bound = crate::weights::snr_error_bound(c, sigma_sq, sigma_sq, cfg.delta, dim)?;
            let report = VerificationReport::new(
                format!("snr-decay/c={c}/D={dim}/quantile"),
                cfg,
                q,
                bound,
                Direction::AtMost,
                json!({
                    "median": median,
                    "quantile_level": 1.0 - cfg.delta,
                    "in_bound_domain": domain.contains(cfg.delta, dim),
                    "min_dim": domain.min_dim,
                    "max_delta": domain.max_delta,
                }),
            );
            out.push(if domain.contains(cfg.delta, dim) {
                report
            } else {
                report.informational()
            });
        }
        let dims: Vec<f64> = cfg.dims.iter().map(|&d| d as f64).collect();
        out.push(VerificationReport::new(
            format!("snr-decay/c={c}/slope"),
            cfg,
            log_log_slope(&dims, &medians),
            cfg.max_slope,
            Direction::AtMost,
            json!({ "dims": cfg.dims, "median_error": medians }),
        ));
    }
    Ok(out)
}

// --------------------------------------------------------------- weight limit

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightLimitConfig {
    pub seed: u64,
    pub snr_grid: Vec<f64>,
    pub dims: Vec<usize>,
    pub oracle_samples: usize,
    pub min_exponent: f64,
    /// Largest allowed gap at the largest dimension.
    pub max_final_gap: f64,
}

impl WeightLimitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            snr_grid: vec![0.0, 0.5, 1.0, 2.0],
            dims: vec![16, 64, 256, 1024, 4096],
            oracle_samples: 100_000,
            min_exponent: 0.4,
            max_final_gap: 0.01,
        }
    }
}

/// The brute-force weight approaches `c / sqrt(c² + 1)` as the dimension
/// grows. The gap is fitted to `A·D^{-β}`.
pub fn check_weight_limit(cfg: &WeightLimitConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::WeightLimit);
    let noise = NoiseModel::gaussian(1.0)?;
    let mut out = Vec::new();
    for (ci, &c) in cfg.snr_grid.iter().enumerate() {
        let limit = k_closed_form(c);
        let mut gaps = Vec::new();
        let mut ks = Vec::new();
        let mut ses = Vec::new();
        for (di, &dim) in cfg.dims.iter().enumerate() {
            let s = Signal::new(ramp(dim, c * (dim as f64).sqrt()))?;
            let k = k_oracle_isotropic(&rng.derive(ci as u64).derive(di as u64), &s, &noise, cfg.oracle_samples);
            gaps.push((k.mean - limit).abs());
            ks.push(k.mean);
            ses.push(k.std_error);
        }
        let details = json!({ "limit": limit, "dims": cfg.dims, "k_oracle": ks, "std_error": ses, "gap": gaps });
        if c == 0.0 {
            // both sides vanish; measure the oracle in standard errors
            let z = ks.iter().zip(&ses).map(|(k, se)| k.abs() / se).fold(0.0, f64::max);
            out.push(VerificationReport::new(
                format!("weight-limit/c={c}/zero"),
                cfg,
                z,
                4.0,
                Direction::AtMost,
                details,
            ));
            continue;
        }
        let dims: Vec<f64> = cfg.dims.iter().map(|&d| d as f64).collect();
        out.push(VerificationReport::new(
            format!("weight-limit/c={c}/exponent"),
            cfg,
            -log_log_slope(&dims, &gaps),
            cfg.min_exponent,
            Direction::AtLeast,
            details.clone(),
        ));
        out.push(VerificationReport::new(
            format!("weight-limit/c={c}/final-gap"),
            cfg,
            *gaps.last().ok_or(Error::Empty("dims"))?,
            cfg.max_final_gap,
            Direction::AtMost,
            details,
        ));
    }
    Ok(out)
}

// ------------------------------------------------------------ n2v equivalence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N2vConfig {
    pub seed: u64,
    pub rho: f64,
    pub dim: usize,
    /// Random `(ŝ, s)` inputs for the exact masked-error identity.
    pub identity_inputs: usize,
    /// Coordinates per exhaustively enumerated mask block.
    pub block: usize,
    pub offset_pairs: usize,
    pub sigma: f64,
    pub n_samples: usize,
}

impl N2vConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rho: 0.1,
            dim: 32,
            identity_inputs: 100,
            block: 8,
            offset_pairs: 5,
            sigma: 0.5,
            n_samples: 200_000,
        }
    }
}

/// `E_b ‖b ⊙ v‖²` under i.i.d. Bernoulli(`rho`) bits, by enumerating every
/// mask of each `block`-sized group of coordinates.
pub fn expected_masked_sq_norm(v: &[f64], rho: f64, block: usize) -> f64 {
    let block = block.clamp(1, 20);
    let mut total = 0.0;
    for chunk in v.chunks(block) {
        let n = chunk.len();
        for bits in 0u32..(1 << n) {
            let ones = bits.count_ones() as i32;
            let p = rho.powi(ones) * (1.0 - rho).powi(n as i32 - ones);
            let sq: f64 = chunk
                .iter()
                .enumerate()
                .filter(|(d, _)| bits >> d & 1 == 1)
                .map(|(_, x)| x * x)
                .sum();
            total += p * sq;
        }
    }
    total
}

fn bernoulli_bits(r: &mut RngStream, dim: usize, rho: f64) -> Vec<bool> {
    (0..dim).map(|_| r.uniform() < rho).collect()
}

fn masked_sq_dist(bits: &[bool], a: &[f64], b: &[f64]) -> f64 {
    bits.iter()
        .zip(a.iter().zip(b))
        .filter(|(m, _)| **m)
        .map(|(_, (x, y))| (x - y).powi(2))
        .sum()
}

/// Masked squared error against noisy targets equals the clean-target one
/// plus a constant that does not depend on the reconstruction.
///
/// Three parts: the exact `rho` factor under the Bernoulli mask law, equality
/// of the noisy-minus-clean offset across reconstructions (common noise,
/// 3 standard errors), and the offset's value `rho·D·sigma²`.
pub fn check_n2v_equivalence(cfg: &N2vConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::N2vEquivalence);
    let mut out = Vec::new();

    let mut r = rng.derive_named("identity");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.identity_inputs {
        let diff: Vec<f64> = (0..cfg.dim).map(|_| standard_normal(&mut r) - standard_normal(&mut r)).collect();
        let exact = expected_masked_sq_norm(&diff, cfg.rho, cfg.block);
        let direct = cfg.rho * dot_slice(&diff, &diff);
        worst = worst.max((exact - direct).abs() / direct.abs().max(f64::MIN_POSITIVE));
    }
    out.push(VerificationReport::new(
        "n2v-equivalence/rho-factor",
        cfg,
        worst,
        1e-12,
        Direction::AtMost,
        json!({ "max_relative_error": worst, "inputs": cfg.identity_inputs }),
    ));

    let s = ramp(cfg.dim, 1.0);
    let mut r = rng.derive_named("reconstructions");
    let recons: Vec<Vec<f64>> = (0..=cfg.offset_pairs)
        .map(|_| s.iter().map(|v| v + 0.3 * standard_normal(&mut r)).collect())
        .collect();
    let noise = NoiseModel::gaussian(cfg.sigma)?;
    let dim = cfg.dim;
    let rho = cfg.rho;
    let offset = |x: &[f64], bits: &[bool], sh: &[f64]| masked_sq_dist(bits, sh, x) - masked_sq_dist(bits, sh, &s);
    for p in 0..cfg.offset_pairs {
        let (a, b) = (&recons[p], &recons[p + 1]);
        let m = chunked_moments(&rng.derive_named("offset").derive(p as u64), cfg.n_samples, |r, n, acc| {
            let mut eps = vec![0.0; dim];
            for _ in 0..n {
                noise.fill(r, &mut eps);
                let x: Vec<f64> = s.iter().zip(&eps).map(|(u, v)| u + v).collect();
                let bits = bernoulli_bits(r, dim, rho);
                acc.push(offset(&x, &bits, a) - offset(&x, &bits, b));
            }
        });
        out.push(VerificationReport::new(
            format!("n2v-equivalence/offset-pair-{p}"),
            cfg,
            m.mean().abs(),
            3.0 * m.std_error(),
            Direction::AtMost,
            json!({ "mean_difference": m.mean(), "std_error": m.std_error() }),
        ));
    }

    let m = chunked_moments(&rng.derive_named("clean"), cfg.n_samples, |r, n, acc| {
        let mut eps = vec![0.0; dim];
        for _ in 0..n {
            noise.fill(r, &mut eps);
            let x: Vec<f64> = s.iter().zip(&eps).map(|(u, v)| u + v).collect();
            let bits = bernoulli_bits(r, dim, rho);
            acc.push(masked_sq_dist(&bits, &s, &x));
        }
    });
    let target = cfg.rho * cfg.dim as f64 * cfg.sigma * cfg.sigma;
    out.push(VerificationReport::new(
        "n2v-equivalence/clean-offset",
        cfg,
        (m.mean() - target).abs(),
        3.0 * m.std_error(),
        Direction::AtMost,
        json!({ "mean": m.mean(), "target": target, "std_error": m.std_error() }),
    ));
    Ok(out)
}

// ----------------------------------------------------------- rank correlation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelationConfig {
    pub seed: u64,
    pub dim: usize,
    pub rho: f64,
    pub sigma: f64,
    pub maps: usize,
    pub n_samples: usize,
    pub min_correlation: f64,
}

impl RankCorrelationConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: 16,
            rho: 0.5,
            sigma: 0.5,
            maps: 50,
            n_samples: 4000,
            min_correlation: 0.8,
        }
    }
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of the ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Masked clean-target loss orders reconstruction maps the same way as the
/// unmasked supervised loss.
///
/// Maps are `h(v) = g·v + net(v)` with random gain `g` and a random tanh
/// network, so their quality spreads out. Maps whose supervised loss has
/// zero variance are dropped.
pub fn check_rank_correlation(cfg: &RankCorrelationConfig) -> Result<Vec<VerificationReport>> {
    let rng = root(cfg.seed, CheckId::RankCorrelation);
    let s: Vec<f64> = (0..cfg.dim)
        .map(|d| 0.5 + (d as f64 * std::f64::consts::PI / cfg.dim as f64).sin())
        .collect();
    let noise = NoiseModel::gaussian(cfg.sigma)?;
    let dim = cfg.dim;
    let results: Vec<Option<(f64, f64)>> = (0..cfg.maps)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let gain = 2.0 * r.uniform();
            let net = Autoencoder::random(&[dim, dim, dim], &[Activation::Tanh, Activation::Identity], &mut r)?;
            let scale = 2.0 * r.uniform();
            let mut supervised = RunningMoments::default();
            let mut masked = RunningMoments::default();
            let mut eps = vec![0.0; dim];
            for _ in 0..cfg.n_samples {
                noise.fill(&mut r, &mut eps);
                let x: Vec<f64> = s.iter().zip(&eps).map(|(a, b)| a + b).collect();
                let net_out = net.reconstruct(&Signal::new(x.clone())?)?;
                let s_hat: Vec<f64> = x
                    .iter()
                    .zip(net_out.iter())
                    .map(|(v, n)| gain * v + scale * n)
                    .collect();
                supervised.push(cs_value(&s_hat, &s));
                let mask = draw_mask(&mut r, dim, cfg.rho)?;
                masked.push(cs_value(&mask.restrict(&s_hat), &mask.restrict(&s)));
            }
            Ok((supervised.variance() > 0.0).then(|| (masked.mean(), supervised.mean())))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    let (m, sup): (Vec<f64>, Vec<f64>) = kept.iter().copied().unzip();
    let rho_s = spearman(&m, &sup);
    Ok(vec![VerificationReport::new(
        "rank-correlation/spearman",
        cfg,
        rho_s,
        cfg.min_correlation,
        Direction::AtLeast,
        json!({ "maps_kept": kept.len(), "masked_loss": m, "supervised_loss": sup }),
    )])
}
