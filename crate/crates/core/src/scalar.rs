//! Numeric abstractions shared by the deterministic statistics.
//!
//! Dataset-structure statistics are ratios of integer counts, so they can be
//! evaluated exactly in rational arithmetic as well as in `f32`/`f64`. Monte
//! Carlo paths (weights, bootstrap replicates) use [`Real`].

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Scalar type for the count-based statistics: `f32`, `f64` or an exact rational.
pub trait Scalar:
    Clone + Debug + Display + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `num / den`, exact when the type allows it.
    fn from_ratio(num: i128, den: u128) -> Self;

    fn of_usize(n: usize) -> Self {
        Self::from_ratio(n as i128, 1)
    }

    fn powi(&self, exp: u32) -> Self {
        num_traits::pow(self.clone(), exp as usize)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// True for exact arithmetic, where identities hold with zero error.
    fn is_exact() -> bool {
        false
    }
}

impl Scalar for f64 {
    fn from_ratio(num: i128, den: u128) -> Self {
        num as f64 / den as f64
    }
}

impl Scalar for f32 {
    fn from_ratio(num: i128, den: u128) -> Self {
        (num as f64 / den as f64) as f32
    }
}

impl Scalar for BigRational {
    fn from_ratio(num: i128, den: u128) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn is_exact() -> bool {
        true
    }
}

/// Floating type used by the bootstrap engine and the simulator.
pub trait Real: Float + FromPrimitive + Into<f64> + Debug + Display + Default + Send + Sync + 'static {
    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Kahan-Babuska (Neumaier) compensated summation.
///
/// In exact arithmetic the compensation term is always zero.
#[derive(Debug, Clone)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self { sum: T::zero(), comp: T::zero() }
    }
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum.clone() + x.clone();
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp.clone() + ((self.sum.clone() - t.clone()) + x);
        } else {
            self.comp = self.comp.clone() + ((x - t.clone()) + self.sum.clone());
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum.clone() + self.comp.clone()
    }
}

impl<T: Scalar> FromIterator<T> for CompensatedSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Relative error with the `max(|reference|, 1e-30)` denominator used throughout
/// the oracle comparisons.
pub fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-30)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let s: CompensatedSum<f64> = xs.iter().copied().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn rational_ratio_is_exact() {
        let a = BigRational::from_ratio(1, 3);
        let b = BigRational::from_ratio(2, 3);
        assert_eq!(a + b, BigRational::from_ratio(1, 1));
        assert!(BigRational::is_exact());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.1, 1.0) - 0.1).abs() < 1e-12);
    }
}
