use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real vector with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signal<T> {
    values: Vec<T>,
}

impl<T: Scalar> Signal<T> {
    /// Validates that `values` is nonempty and finite.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("signal"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn filled(dim: usize, value: T) -> Self {
        Self {
            values: vec![value; dim],
        }
    }

    /// Skips the finiteness check. Used for values produced by arithmetic on
    /// already-validated signals.
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self::from_vec_unchecked(self.values.iter().map(|&v| v * alpha).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self::from_vec_unchecked(
            self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self::from_vec_unchecked(
            self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect(),
        ))
    }

    /// Converts element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Signal<U> {
        Signal::from_vec_unchecked(self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect())
    }
}

impl<T> Index<usize> for Signal<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for Signal<T> {
    type Error = Error;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

fn check_dims<T: Scalar>(u: &Signal<T>, v: &Signal<T>) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::DimMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(())
}

pub fn dot<T: Scalar>(u: &Signal<T>, v: &Signal<T>) -> Result<T> {
    check_dims(u, v)?;
    Ok(dot_slice(u.as_slice(), v.as_slice()))
}

pub fn norm2<T: Scalar>(u: &Signal<T>) -> T {
    norm2_slice(u.as_slice())
}

pub fn hadamard<T: Scalar>(u: &Signal<T>, v: &Signal<T>) -> Result<Signal<T>> {
    check_dims(u, v)?;
    Ok(Signal::from_vec_unchecked(
        u.iter().zip(v.iter()).map(|(&a, &b)| a * b).collect(),
    ))
}

#[inline]
pub(crate) fn dot_slice<T: Scalar>(u: &[T], v: &[T]) -> T {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[inline]
pub(crate) fn norm2_slice<T: Scalar>(u: &[T]) -> T {
    dot_slice(u, u).sqrt()
}
