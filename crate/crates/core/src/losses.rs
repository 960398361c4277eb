//! Per-sample losses with gradients with respect to the reconstruction, and
//! mini-batch risks.
//!
//! All gradients treat the target, the masked input, the mask and the weight
//! as constants; only the reconstruction `ŝ` is differentiated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{MaskSpec, MaskedPair};
use crate::numerics::{dot_slice, norm2_slice, RngStream, Signal};
use crate::scalar::Scalar;
use crate::weights::{self, WeightEstimate};

/// Cosine guard: denominators are `max(‖u‖‖v‖, eta)`.
pub const DEFAULT_ETA: f64 = 1.0e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Signal<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRisk<T> {
    pub mean_value: T,
    pub per_sample: Vec<LossValue<T>>,
}

impl<T> BatchRisk<T> {
    pub fn batch_size(&self) -> usize {
        self.per_sample.len()
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}

/// `−⟨u, v⟩ / max(‖u‖‖v‖, eta)` and its gradient in `v`.
pub(crate) fn cs_slices<T: Scalar>(u: &[T], v: &[T], eta: T) -> (T, Vec<T>) {
    let uv = dot_slice(u, v);
    let nu = norm2_slice(u);
    let nv = norm2_slice(v);
    let prod = nu * nv;
    if prod <= eta {
        // guarded branch, also used on the boundary
        let value = -uv / eta;
        let grad = u.iter().map(|&a| -a / eta).collect();
        (value, grad)
    } else {
        let value = -uv / prod;
        let a = T::one() / prod;
        let b = uv / (prod * nv * nv);
        let grad = u.iter().zip(v).map(|(&ui, &vi)| -ui * a + vi * b).collect();
        (value, grad)
    }
}

/// Negative cosine similarity `ℓ_CS(u, v)`, differentiated in `v`.
pub fn cs_loss<T: Scalar>(u: &Signal<T>, v: &Signal<T>, eta: T) -> Result<LossValue<T>> {
    check_dims(u.dim(), v.dim())?;
    let (value, grad) = cs_slices(u.as_slice(), v.as_slice(), eta);
    Ok(LossValue {
        value,
        grad: Signal::from_vec_unchecked(grad),
    })
}

/// `‖x − ŝ‖²`.
pub fn mse_loss<T: Scalar>(x: &Signal<T>, s_hat: &Signal<T>) -> Result<LossValue<T>> {
    check_dims(x.dim(), s_hat.dim())?;
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = x
        .iter()
        .zip(s_hat.iter())
        .map(|(&xi, &si)| {
            let d = si - xi;
            value += d * d;
            two * d
        })
        .collect();
    Ok(LossValue {
        value,
        grad: Signal::from_vec_unchecked(grad),
    })
}

/// `‖b ⊙ ŝ − b ⊙ x‖²`. `ŝ` is expected to be computed from `x̃`.
pub fn n2v_loss<T: Scalar>(pair: &MaskedPair<T>, s_hat: &Signal<T>) -> Result<LossValue<T>> {
    check_dims(pair.dim(), s_hat.dim())?;
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = (0..pair.dim())
        .map(|d| {
            if pair.mask().is_set(d) {
                let diff = s_hat[d] - pair.x()[d];
                value += diff * diff;
                two * diff
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(LossValue {
        value,
        grad: Signal::from_vec_unchecked(grad),
    })
}

/// `weight · ℓ_CS(b ⊙ x, b ⊙ ŝ)` with gradient supported on the mask.
fn weighted_masked_cs<T: Scalar>(
    pair: &MaskedPair<T>,
    s_hat: &Signal<T>,
    weight: T,
    eta: T,
) -> Result<LossValue<T>> {
    check_dims(pair.dim(), s_hat.dim())?;
    let mask = pair.mask();
    let u = mask.restrict(pair.x().as_slice());
    let v = mask.restrict(s_hat.as_slice());
    let (value, sub_grad) = cs_slices(&u, &v, eta);
    let mut grad = vec![T::zero(); pair.dim()];
    for (d, g) in mask.support().zip(sub_grad) {
        grad[d] = g * weight;
    }
    Ok(LossValue {
        value: value * weight,
        grad: Signal::from_vec_unchecked(grad),
    })
}

/// `ℓ_CS(b ⊙ x, b ⊙ ŝ) / k̂`. `k_hat` must already be floored.
pub fn dcs_loss<T: Scalar>(
    pair: &MaskedPair<T>,
    s_hat: &Signal<T>,
    k_hat: T,
    eta: T,
) -> Result<LossValue<T>> {
    if k_hat.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid(format!("k_hat must be positive, got {k_hat}")));
    }
    weighted_masked_cs(pair, s_hat, T::one() / k_hat, eta)
}

/// Weight used by [`dcs_loss_approx`]: `sqrt(ĉ² + 1) / (ĉ + eta)`.
pub fn approx_weight(c_hat: f64, eta: f64) -> f64 {
    (c_hat * c_hat + 1.0).sqrt() / (c_hat + eta)
}

/// dCS loss with the closed-form weight evaluated at `ĉ` of the masked pair.
pub fn dcs_loss_approx<T: Scalar>(pair: &MaskedPair<T>, s_hat: &Signal<T>, eta: T) -> Result<LossValue<T>> {
    let c_hat = weights::estimate_c_masked(pair)?;
    let w = approx_weight(c_hat, eta.to_f64_lossy());
    weighted_masked_cs(pair, s_hat, T::lit(w), eta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "cs")]
    Cs,
    #[serde(rename = "n2v")]
    N2v,
    #[serde(rename = "dcs")]
    Dcs,
    #[serde(rename = "dcs-approx")]
    DcsApprox,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Mse,
        LossKind::Cs,
        LossKind::N2v,
        LossKind::Dcs,
        LossKind::DcsApprox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Cs => "cs",
            LossKind::N2v => "n2v",
            LossKind::Dcs => "dcs",
            LossKind::DcsApprox => "dcs-approx",
        }
    }

    /// Whether the network input is the masked `x̃` rather than `x`.
    pub fn is_masked(self) -> bool {
        matches!(self, LossKind::N2v | LossKind::Dcs | LossKind::DcsApprox)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown loss kind {s:?}")))
    }
}

/// Everything a loss needs besides the sample and the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub mask: MaskSpec,
    pub rho: f64,
    pub eta: f64,
    /// Monte Carlo draws for `k̂`.
    pub n_mc: usize,
    pub k_floor: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind, mask: MaskSpec) -> Self {
        Self {
            kind,
            mask,
            rho: crate::masking::DEFAULT_RHO,
            eta: DEFAULT_ETA,
            n_mc: weights::DEFAULT_TRAIN_SAMPLES,
            k_floor: weights::DEFAULT_K_FLOOR,
        }
    }
}

/// Per-sample draws made before the forward pass: the mask, `x̃`, and the weight.
#[derive(Clone, Debug)]
pub struct PreparedSample<T> {
    pub pair: Option<MaskedPair<T>>,
    /// Multiplier applied to the masked cosine loss.
    pub weight: f64,
    pub estimate: Option<WeightEstimate>,
}

impl<T: Scalar> PreparedSample<T> {
    /// What the network should see: `x̃` for masked losses, `x` otherwise.
    pub fn input<'a>(&'a self, x: &'a Signal<T>) -> &'a Signal<T> {
        self.pair.as_ref().map_or(x, |p| p.x_tilde())
    }
}

/// Draws the mask, builds `x̃`, and computes the weight for one sample.
///
/// For dCS the mask is redrawn until it selects at least two coordinates,
/// since the weight estimator needs dimension >= 2. A masked pair whose
/// support values coincide has no measurable noise; its weight is taken at
/// the `ĉ → ∞` limit, which is 1.
pub fn prepare_sample<T: Scalar>(
    cfg: &LossConfig,
    x: &Signal<T>,
    rng: &mut RngStream,
) -> Result<PreparedSample<T>> {
    match cfg.kind {
        LossKind::Mse | LossKind::Cs => Ok(PreparedSample {
            pair: None,
            weight: 1.0,
            estimate: None,
        }),
        LossKind::N2v => Ok(PreparedSample {
            pair: Some(cfg.mask.mask(rng, x, cfg.rho, 1)?),
            weight: 1.0,
            estimate: None,
        }),
        LossKind::Dcs => {
            let pair = cfg.mask.mask(rng, x, cfg.rho, 2)?;
            match weights::estimate_c_masked(&pair) {
                Ok(c_hat) => {
                    let est = weights::estimate_k_mc(rng, c_hat, pair.mask().count(), cfg.n_mc)?;
                    Ok(PreparedSample {
                        weight: 1.0 / est.floored(cfg.k_floor),
                        estimate: Some(est),
                        pair: Some(pair),
                    })
                }
                Err(Error::Degenerate(_)) => Ok(PreparedSample {
                    pair: Some(pair),
                    weight: 1.0,
                    estimate: None,
                }),
                Err(e) => Err(e),
            }
        }
        LossKind::DcsApprox => {
            let pair = cfg.mask.mask(rng, x, cfg.rho, 1)?;
            let weight = match weights::estimate_c_masked(&pair) {
                Ok(c_hat) => approx_weight(c_hat, cfg.eta),
                Err(Error::Degenerate(_)) => 1.0,
                Err(e) => return Err(e),
            };
            Ok(PreparedSample {
                pair: Some(pair),
                weight,
                estimate: None,
            })
        }
    }
}

/// Evaluates the configured loss for a prepared sample and its reconstruction.
pub fn evaluate_prepared<T: Scalar>(
    cfg: &LossConfig,
    prepared: &PreparedSample<T>,
    x: &Signal<T>,
    s_hat: &Signal<T>,
) -> Result<LossValue<T>> {
    let eta = T::lit(cfg.eta);
    let pair = || {
        prepared
            .pair
            .as_ref()
            .ok_or_else(|| Error::invalid("masked loss without a masked pair"))
    };
    match cfg.kind {
        LossKind::Mse => mse_loss(x, s_hat),
        LossKind::Cs => cs_loss(x, s_hat, eta),
        LossKind::N2v => n2v_loss(pair()?, s_hat),
        LossKind::Dcs | LossKind::DcsApprox => {
            weighted_masked_cs(pair()?, s_hat, T::lit(prepared.weight), eta)
        }
    }
}

/// Mini-batch risk. Sample `i` draws its mask and weight from `rngs[i]`;
/// `reconstruct` maps the network input to `ŝ`. The mean is summed in
/// sample order.
pub fn batch_risk<T, F>(
    cfg: &LossConfig,
    batch: &[Signal<T>],
    rngs: &mut [RngStream],
    mut reconstruct: F,
) -> Result<BatchRisk<T>>
where
    T: Scalar,
    F: FnMut(&Signal<T>) -> Result<Signal<T>>,
{
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if rngs.len() != batch.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            actual: rngs.len(),
        });
    }
    let mut per_sample = Vec::with_capacity(batch.len());
    for (x, rng) in batch.iter().zip(rngs.iter_mut()) {
        let prepared = prepare_sample(cfg, x, rng)?;
        let s_hat = reconstruct(prepared.input(x))?;
        per_sample.push(evaluate_prepared(cfg, &prepared, x, &s_hat)?);
    }
    let total = per_sample.iter().fold(T::zero(), |acc, l| acc + l.value);
    Ok(BatchRisk {
        mean_value: total / T::lit(per_sample.len() as f64),
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{GridShape, MaskVec};

    fn sig(v: &[f64]) -> Signal<f64> {
        Signal::new(v.to_vec()).unwrap()
    }

    fn pair(x: &[f64], xt: &[f64], bits: &[bool]) -> MaskedPair<f64> {
        MaskedPair::new(sig(x), sig(xt), MaskVec::from_bits(bits.to_vec(), 0.5).unwrap()).unwrap()
    }

    #[test]
    fn cs_values() {
        let eta = DEFAULT_ETA;
        let u = sig(&[1.0, 2.0, 3.0]);
        assert!((cs_loss(&u, &u, eta).unwrap().value + 1.0).abs() < 1e-15);
        assert_eq!(cs_loss(&sig(&[1.0, 0.0]), &sig(&[0.0, 1.0]), eta).unwrap().value, 0.0);
        assert!((cs_loss(&sig(&[1.0, 1.0]), &sig(&[-1.0, -1.0]), eta).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cs_guard_branch() {
        let u = sig(&[1e-5, 0.0]);
        let v = sig(&[1e-5, 0.0]);
        let l = cs_loss(&u, &v, 1e-8).unwrap();
        assert!((l.value + 1e-10 / 1e-8).abs() < 1e-15);
        assert_eq!(l.grad.as_slice(), &[-1e-5 / 1e-8, 0.0]);
    }

    #[test]
    fn cs_scale_invariant() {
        let u = sig(&[0.3, -1.2, 2.0]);
        let v = sig(&[1.0, 0.5, -0.25]);
        let a = cs_loss(&u, &v, DEFAULT_ETA).unwrap();
        let b = cs_loss(&u, &v.scaled(4.0), DEFAULT_ETA).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
        for (ga, gb) in a.grad.iter().zip(b.grad.iter()) {
            assert!((ga / 4.0 - gb).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_values() {
        let x = sig(&[1.0, 0.0]);
        assert_eq!(mse_loss(&x, &x).unwrap().value, 0.0);
        let l = mse_loss(&x, &sig(&[0.0, 1.0])).unwrap();
        assert_eq!(l.value, 2.0);
        assert_eq!(l.grad.as_slice(), &[-2.0, 2.0]);
        assert!(mse_loss(&x, &sig(&[1.0])).is_err());
    }

    #[test]
    fn n2v_values() {
        let p = pair(&[2.0, 9.0], &[9.0, 9.0], &[true, false]);
        let l = n2v_loss(&p, &sig(&[5.0, 9.0])).unwrap();
        assert_eq!(l.value, 9.0);
        let l = n2v_loss(&p, &sig(&[2.0, -4.0])).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grad[1], 0.0);
    }

    #[test]
    fn dcs_values() {
        let p = pair(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 4.0, 4.0], &[true, false, true, false]);
        let x = p.x().clone();
        let eta = DEFAULT_ETA;
        let one = dcs_loss(&p, &x, 1.0, eta).unwrap();
        assert!((one.value + 1.0).abs() < 1e-15);

        let s_hat = sig(&[0.3, -7.0, 1.1, 2.0]);
        let a = dcs_loss(&p, &s_hat, 1.0, eta).unwrap();
        let b = dcs_loss(&p, &s_hat, 0.5, eta).unwrap();
        assert!((b.value - 2.0 * a.value).abs() < 1e-15);
        for (ga, gb) in a.grad.iter().zip(b.grad.iter()) {
            assert!((gb - 2.0 * ga).abs() < 1e-15);
        }
        assert_eq!(a.grad[1], 0.0);
        assert_eq!(a.grad[3], 0.0);

        // positive rescaling of x on the support
        let scaled = sig(&[3.0, 0.0, 9.0, 0.0]);
        assert!((dcs_loss(&p, &scaled, 0.25, eta).unwrap().value + 4.0).abs() < 1e-12);
    }

    #[test]
    fn dcs_unit_weight_is_masked_cs() {
        let p = pair(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], &[true, false, true]);
        let s_hat = sig(&[0.2, 0.4, -0.3]);
        let d = dcs_loss(&p, &s_hat, 1.0, DEFAULT_ETA).unwrap();
        let c = cs_loss(&sig(&[1.0, 3.0]), &sig(&[0.2, -0.3]), DEFAULT_ETA).unwrap();
        assert_eq!(d.value, c.value);
        assert_eq!(d.grad[0], c.grad[0]);
        assert_eq!(d.grad[2], c.grad[1]);
    }

    #[test]
    fn approx_weight_limits() {
        assert!((approx_weight(1.0, 0.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((approx_weight(1e9, 1e-8) - 1.0).abs() < 1e-8);
        let p = pair(&[1.0, 2.0], &[1.0, 2.0], &[true, true]);
        assert!(matches!(
            dcs_loss_approx(&p, &sig(&[1.0, 1.0]), DEFAULT_ETA),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn kind_strings() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("sure".parse::<LossKind>().is_err());
    }

    fn cfg(kind: LossKind) -> LossConfig {
        LossConfig::new(
            kind,
            MaskSpec::Bsm {
                shape: GridShape::new(4, 4).unwrap(),
                patch_radius: 1,
            },
        )
    }

    fn samples(n: usize) -> Vec<Signal<f64>> {
        let mut rng = RngStream::new(99, 0);
        (0..n)
            .map(|_| Signal::new((0..16).map(|_| rng.uniform() + 0.2).collect()).unwrap())
            .collect()
    }

    fn streams(n: usize) -> Vec<RngStream> {
        (0..n as u64).map(|i| RngStream::new(5, i)).collect()
    }

    fn halve(x: &Signal<f64>) -> Result<Signal<f64>> {
        Ok(x.scaled(0.5))
    }

    #[test]
    fn batch_of_one_is_sample_loss() {
        for kind in LossKind::ALL {
            let c = cfg(kind);
            let xs = samples(1);
            let risk = batch_risk(&c, &xs, &mut streams(1), halve).unwrap();
            let mut rng = streams(1).remove(0);
            let prep = prepare_sample(&c, &xs[0], &mut rng).unwrap();
            let s_hat = halve(prep.input(&xs[0])).unwrap();
            let single = evaluate_prepared(&c, &prep, &xs[0], &s_hat).unwrap();
            assert_eq!(risk.mean_value, single.value, "{kind}");
            assert_eq!(risk.batch_size(), 1);
        }
    }

    #[test]
    fn duplicated_batch_same_mean() {
        for kind in LossKind::ALL {
            let c = cfg(kind);
            let xs = samples(4);
            let mut rs = streams(4);
            let base = batch_risk(&c, &xs, &mut rs.clone(), halve).unwrap();
            let mut xs2 = xs.clone();
            xs2.extend(xs.iter().cloned());
            let mut rs2 = rs.clone();
            rs2.append(&mut rs);
            let dup = batch_risk(&c, &xs2, &mut rs2, halve).unwrap();
            assert!((base.mean_value - dup.mean_value).abs() < 1e-14, "{kind}");
        }
    }

    #[test]
    fn batch_deterministic() {
        let c = cfg(LossKind::Dcs);
        let xs = samples(8);
        let a = batch_risk(&c, &xs, &mut streams(8), halve).unwrap();
        let b = batch_risk(&c, &xs, &mut streams(8), halve).unwrap();
        assert_eq!(a.mean_value.to_bits(), b.mean_value.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(
            batch_risk(&cfg(LossKind::Mse), &[], &mut [], halve),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn masked_gradients_vanish_off_support() {
        let xs = samples(6);
        for kind in [LossKind::N2v, LossKind::Dcs, LossKind::DcsApprox] {
            let c = cfg(kind);
            let mut rngs = streams(6);
            for (x, rng) in xs.iter().zip(rngs.iter_mut()) {
                let prep = prepare_sample(&c, x, rng).unwrap();
                let s_hat = x.scaled(0.7);
                let l = evaluate_prepared(&c, &prep, x, &s_hat).unwrap();
                let mask = prep.pair.as_ref().unwrap().mask();
                for d in 0..x.dim() {
                    if !mask.is_set(d) {
                        assert_eq!(l.grad[d], 0.0);
                    }
                }
            }
        }
    }
}
