//! Building the masked counterpart `x̃` of a noisy vector `x`.
//!
//! Two procedures are provided. Blind-spot masking works on a 2-D grid and
//! replaces each selected pixel by a random pixel of the surrounding
//! `(2r+1) x (2r+1)` patch (clipped at the image border, center excluded).
//! Time-step masking works on a sequence and replaces each selected step by a
//! random step within `±delta` (clipped at the ends, center excluded). Both
//! select coordinates with an i.i.d. Bernoulli(`rho`) mask and copy every
//! other coordinate verbatim. Replacement values are always read from the
//! original `x`, never from partially masked output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Signal};
use crate::scalar::Scalar;

pub const DEFAULT_RHO: f64 = 0.10;
pub const DEFAULT_PATCH_RADIUS: usize = 1;

/// Bernoulli 0/1 selection vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskVec {
    bits: Vec<bool>,
    rho: f64,
    count: usize,
}

impl MaskVec {
    /// Builds a mask from explicit bits. `rho` records the draw probability.
    pub fn from_bits(bits: Vec<bool>, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if bits.is_empty() {
            return Err(Error::Empty("mask"));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self { bits, rho, count })
    }

    /// All-ones mask.
    pub fn full(dim: usize, rho: f64) -> Result<Self> {
        Self::from_bits(vec![true; dim], rho)
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `‖b‖₁`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, d: usize) -> bool {
        self.bits[d]
    }

    /// Indices with bit 1, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// `b ⊙ v`.
    pub fn apply<T: Scalar>(&self, v: &Signal<T>) -> Result<Signal<T>> {
        if v.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: v.dim(),
            });
        }
        Ok(Signal::from_vec_unchecked(
            v.iter()
                .zip(&self.bits)
                .map(|(&x, &b)| if b { x } else { T::zero() })
                .collect(),
        ))
    }

    /// Entries of `v` on the mask support, in index order.
    pub fn restrict<T: Scalar>(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.dim());
        self.support().map(|d| v[d]).collect()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Grid dimensions for blind-spot masking; coordinates are row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        Ok(Self { height, width })
    }

    /// A length-`t` sequence viewed as a `1 x t` grid.
    pub fn sequence(t: usize) -> Result<Self> {
        Self::new(1, t)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(x, x̃, b)` with `x_d == x̃_d` wherever `b_d == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedPair<T> {
    x: Signal<T>,
    x_tilde: Signal<T>,
    mask: MaskVec,
}

impl<T: Scalar> MaskedPair<T> {
    /// Checks dimensions and that unmasked coordinates agree exactly.
    pub fn new(x: Signal<T>, x_tilde: Signal<T>, mask: MaskVec) -> Result<Self> {
        if x_tilde.dim() != x.dim() {
            return Err(Error::DimMismatch {
                expected: x.dim(),
                actual: x_tilde.dim(),
            });
        }
        if mask.dim() != x.dim() {
            return Err(Error::DimMismatch {
                expected: x.dim(),
                actual: mask.dim(),
            });
        }
        let leaked = (0..x.dim()).find(|&d| !mask.is_set(d) && x[d] != x_tilde[d]);
        if let Some(d) = leaked {
            return Err(Error::invalid(format!(
                "unmasked coordinate {d} differs between x and x_tilde"
            )));
        }
        Ok(Self { x, x_tilde, mask })
    }

    pub fn x(&self) -> &Signal<T> {
        &self.x
    }

    pub fn x_tilde(&self) -> &Signal<T> {
        &self.x_tilde
    }

    pub fn mask(&self) -> &MaskVec {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// `(x, x̃)` restricted to the mask support.
    pub fn masked_subvectors(&self) -> (Vec<T>, Vec<T>) {
        (
            self.mask.restrict(self.x.as_slice()),
            self.mask.restrict(self.x_tilde.as_slice()),
        )
    }
}

/// Draws i.i.d. Bernoulli(`rho`) bits, redrawing until at least one bit is set.
pub fn draw_mask(rng: &mut RngStream, dim: usize, rho: f64) -> Result<MaskVec> {
    draw_mask_with_min(rng, dim, rho, 1)
}

/// Like [`draw_mask`] but redraws until `‖b‖₁ >= min_count`.
pub fn draw_mask_with_min(
    rng: &mut RngStream,
    dim: usize,
    rho: f64,
    min_count: usize,
) -> Result<MaskVec> {
    check_rho(rho)?;
    if dim == 0 {
        return Err(Error::Empty("mask"));
    }
    if min_count > dim {
        return Err(Error::invalid(format!(
            "cannot select {min_count} coordinates out of {dim}"
        )));
    }
    loop {
        let bits: Vec<bool> = (0..dim).map(|_| rng.uniform() < rho).collect();
        let count = bits.iter().filter(|&&b| b).count();
        if count >= min_count.max(1) {
            return Ok(MaskVec { bits, rho, count });
        }
    }
}

/// Blind-spot masking on a grid with a fresh Bernoulli mask.
pub fn blind_spot_mask<T: Scalar>(
    rng: &mut RngStream,
    x: &Signal<T>,
    shape: GridShape,
    rho: f64,
    patch_radius: usize,
) -> Result<MaskedPair<T>> {
    check_grid(x, shape, patch_radius)?;
    let mask = draw_mask(rng, x.dim(), rho)?;
    blind_spot_with_mask(rng, x, shape, patch_radius, mask)
}

/// Blind-spot masking with a caller-supplied mask.
pub fn blind_spot_with_mask<T: Scalar>(
    rng: &mut RngStream,
    x: &Signal<T>,
    shape: GridShape,
    patch_radius: usize,
    mask: MaskVec,
) -> Result<MaskedPair<T>> {
    check_grid(x, shape, patch_radius)?;
    if mask.dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            actual: mask.dim(),
        });
    }
    let src = x.as_slice();
    let mut out = src.to_vec();
    for d in mask.support() {
        let (row, col) = (d / shape.width, d % shape.width);
        let (nr, nc) = random_patch_neighbor(rng, row, col, shape, patch_radius);
        out[d] = src[nr * shape.width + nc];
    }
    MaskedPair::new(x.clone(), Signal::from_vec_unchecked(out), mask)
}

fn check_grid<T: Scalar>(x: &Signal<T>, shape: GridShape, patch_radius: usize) -> Result<()> {
    if shape.len() != x.dim() {
        return Err(Error::DimMismatch {
            expected: shape.len(),
            actual: x.dim(),
        });
    }
    if patch_radius == 0 {
        return Err(Error::invalid("patch radius must be at least 1"));
    }
    if shape.len() < 2 {
        return Err(Error::invalid("a 1x1 grid has no neighbors to sample"));
    }
    Ok(())
}

/// Uniform pixel of the clipped patch around `(row, col)`, excluding the center.
fn random_patch_neighbor(
    rng: &mut RngStream,
    row: usize,
    col: usize,
    shape: GridShape,
    radius: usize,
) -> (usize, usize) {
    let r0 = row.saturating_sub(radius);
    let r1 = (row + radius).min(shape.height - 1);
    let c0 = col.saturating_sub(radius);
    let c1 = (col + radius).min(shape.width - 1);
    let rows = r1 - r0 + 1;
    let cols = c1 - c0 + 1;
    // index into the clipped box with the center removed
    let center = (row - r0) * cols + (col - c0);
    let mut k = rng.index(rows * cols - 1);
    if k >= center {
        k += 1;
    }
    (r0 + k / cols, c0 + k % cols)
}

/// Time-step masking of a sequence with a fresh Bernoulli mask.
pub fn tau_amn_mask<T: Scalar>(
    rng: &mut RngStream,
    x: &Signal<T>,
    rho: f64,
    delta: usize,
) -> Result<MaskedPair<T>> {
    check_sequence(x, delta)?;
    let mask = draw_mask(rng, x.dim(), rho)?;
    tau_amn_with_mask(rng, x, delta, mask)
}

/// Time-step masking with a caller-supplied mask.
pub fn tau_amn_with_mask<T: Scalar>(
    rng: &mut RngStream,
    x: &Signal<T>,
    delta: usize,
    mask: MaskVec,
) -> Result<MaskedPair<T>> {
    check_sequence(x, delta)?;
    let len = x.dim();
    let src = x.as_slice();
    let mut out = src.to_vec();
    for t in mask.support() {
        let lo = t.saturating_sub(delta);
        let hi = (t + delta).min(len - 1);
        let mut k = lo + rng.index(hi - lo);
        if k >= t {
            k += 1;
        }
        out[t] = src[k];
    }
    MaskedPair::new(x.clone(), Signal::from_vec_unchecked(out), mask)
}

fn check_sequence<T: Scalar>(x: &Signal<T>, delta: usize) -> Result<()> {
    if x.dim() < 2 {
        return Err(Error::invalid("sequence masking needs length at least 2"));
    }
    if delta == 0 {
        return Err(Error::invalid("delta must be at least 1"));
    }
    Ok(())
}

/// Which masking procedure to use, with its geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    Bsm { shape: GridShape, patch_radius: usize },
    TauAmn { delta: usize },
}

impl MaskSpec {
    /// Draws a mask with at least `min_count` bits and builds the pair.
    pub fn mask<T: Scalar>(
        &self,
        rng: &mut RngStream,
        x: &Signal<T>,
        rho: f64,
        min_count: usize,
    ) -> Result<MaskedPair<T>> {
        match *self {
            MaskSpec::Bsm {
                shape,
                patch_radius,
            } => {
                check_grid(x, shape, patch_radius)?;
                let mask = draw_mask_with_min(rng, x.dim(), rho, min_count)?;
                blind_spot_with_mask(rng, x, shape, patch_radius, mask)
            }
            MaskSpec::TauAmn { delta } => {
                check_sequence(x, delta)?;
                let mask = draw_mask_with_min(rng, x.dim(), rho, min_count)?;
                tau_amn_with_mask(rng, x, delta, mask)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: Vec<f64>) -> Signal<f64> {
        Signal::new(v).unwrap()
    }

    fn ramp(n: usize) -> Signal<f64> {
        sig((0..n).map(|i| i as f64).collect())
    }

    #[test]
    fn rho_domain() {
        let mut rng = RngStream::new(0, 0);
        assert!(draw_mask(&mut rng, 10, 0.0).is_err());
        assert!(draw_mask(&mut rng, 10, 1.0).is_err());
        assert!(draw_mask(&mut rng, 10, -0.2).is_err());
        let m = draw_mask(&mut rng, 10, 0.999).unwrap();
        assert_eq!(m.rho(), 0.999);
    }

    #[test]
    fn mask_never_empty() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..2000 {
            let m = draw_mask(&mut rng, 3, 0.01).unwrap();
            assert!(m.count() >= 1);
            assert_eq!(m.count(), m.bits().iter().filter(|&&b| b).count());
        }
    }

    #[test]
    fn mask_density() {
        let mut rng = RngStream::new(2, 0);
        let dim = 100_000;
        let mean: f64 = (0..100)
            .map(|_| draw_mask(&mut rng, dim, 0.1).unwrap().count() as f64 / dim as f64)
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.1).abs() < 0.003, "mean density {mean}");
    }

    #[test]
    fn min_count_respected() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..500 {
            assert!(draw_mask_with_min(&mut rng, 8, 0.05, 2).unwrap().count() >= 2);
        }
        assert!(draw_mask_with_min(&mut rng, 2, 0.5, 3).is_err());
    }

    #[test]
    fn bsm_copies_unmasked() {
        let mut rng = RngStream::new(4, 0);
        let x = ramp(64);
        let shape = GridShape::new(8, 8).unwrap();
        for _ in 0..50 {
            let pair = blind_spot_mask(&mut rng, &x, shape, 0.3, 1).unwrap();
            for d in 0..64 {
                if !pair.mask().is_set(d) {
                    assert_eq!(pair.x_tilde()[d], x[d]);
                } else {
                    // ramp has distinct values: a masked pixel always changes
                    assert_ne!(pair.x_tilde()[d], x[d]);
                }
            }
        }
    }

    #[test]
    fn bsm_constant_image_unchanged() {
        let mut rng = RngStream::new(5, 0);
        let x = sig(vec![7.0; 25]);
        let shape = GridShape::new(5, 5).unwrap();
        for _ in 0..20 {
            let pair = blind_spot_mask(&mut rng, &x, shape, 0.5, 1).unwrap();
            assert_eq!(pair.x_tilde(), &x);
        }
    }

    #[test]
    fn bsm_neighbors_stay_in_patch() {
        let mut rng = RngStream::new(6, 0);
        let (h, w) = (6, 7);
        let x = ramp(h * w);
        let shape = GridShape::new(h, w).unwrap();
        for _ in 0..200 {
            let pair = blind_spot_mask(&mut rng, &x, shape, 0.4, 2).unwrap();
            for d in pair.mask().support() {
                let src = pair.x_tilde()[d] as usize;
                let (r, c) = (d / w, d % w);
                let (sr, sc) = (src / w, src % w);
                assert!(src != d);
                assert!(r.abs_diff(sr) <= 2 && c.abs_diff(sc) <= 2);
            }
        }
    }

    #[test]
    fn bsm_rejects_bad_geometry() {
        let mut rng = RngStream::new(7, 0);
        let one = sig(vec![1.0]);
        assert!(blind_spot_mask(&mut rng, &one, GridShape::new(1, 1).unwrap(), 0.5, 1).is_err());
        let x = ramp(6);
        assert!(blind_spot_mask(&mut rng, &x, GridShape::new(2, 2).unwrap(), 0.5, 1).is_err());
        assert!(blind_spot_mask(&mut rng, &x, GridShape::new(2, 3).unwrap(), 0.5, 0).is_err());
    }

    #[test]
    fn bsm_corner_uses_clipped_patch() {
        // top-left corner of a 3x3 grid with r = 1 has neighbors {1, 3, 4}
        let mut rng = RngStream::new(8, 0);
        let x = ramp(9);
        let shape = GridShape::new(3, 3).unwrap();
        let mut bits = vec![false; 9];
        bits[0] = true;
        let mask = MaskVec::from_bits(bits, 0.5).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let pair = blind_spot_with_mask(&mut rng, &x, shape, 1, mask.clone()).unwrap();
            seen.insert(pair.x_tilde()[0] as usize);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 3, 4]);
    }

    #[test]
    fn amn_window() {
        let mut rng = RngStream::new(9, 0);
        let x = ramp(40);
        for _ in 0..200 {
            let pair = tau_amn_mask(&mut rng, &x, 0.3, 2).unwrap();
            for t in 0..40 {
                let v = pair.x_tilde()[t] as usize;
                if pair.mask().is_set(t) {
                    assert!(v != t && v.abs_diff(t) <= 2);
                } else {
                    assert_eq!(v, t);
                }
            }
        }
    }

    #[test]
    fn amn_constant_and_errors() {
        let mut rng = RngStream::new(10, 0);
        let x = sig(vec![3.5; 12]);
        let pair = tau_amn_mask(&mut rng, &x, 0.5, 3).unwrap();
        assert_eq!(pair.x_tilde(), &x);
        assert!(tau_amn_mask(&mut rng, &sig(vec![1.0]), 0.5, 1).is_err());
        assert!(tau_amn_mask(&mut rng, &x, 0.5, 0).is_err());
    }

    #[test]
    fn amn_endpoints_clip() {
        // t = 0 with delta = 2 can only draw from {1, 2}
        let mut rng = RngStream::new(11, 0);
        let x = ramp(5);
        let mut bits = vec![false; 5];
        bits[0] = true;
        let mask = MaskVec::from_bits(bits, 0.3).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..300 {
            let pair = tau_amn_with_mask(&mut rng, &x, 2, mask.clone()).unwrap();
            seen.insert(pair.x_tilde()[0] as usize);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn pair_rejects_leak() {
        let mask = MaskVec::from_bits(vec![true, false], 0.5).unwrap();
        assert!(MaskedPair::new(sig(vec![1.0, 2.0]), sig(vec![5.0, 3.0]), mask.clone()).is_err());
        assert!(MaskedPair::new(sig(vec![1.0, 2.0]), sig(vec![5.0, 2.0]), mask).is_ok());
    }
}
