use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the numerical core is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(x)))` over an iterator.
///
/// Two passes: max extraction, then a left-to-right sum. Returns `-inf` when every
/// term is `-inf` (or the iterator is empty).
pub fn log_sum_exp<T: Scalar, I>(values: I) -> T
where
    I: IntoIterator<Item = T>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(T::neg_infinity(), |m, v| m.max(v));
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let mut acc = T::zero();
    for v in iter {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_on_moderate_values() {
        let v = [0.1_f64, -2.0, 3.5];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v.iter().copied()) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_handles_large_negative_and_neg_inf() {
        let v = [-1e8_f64, f64::NEG_INFINITY];
        assert_eq!(log_sum_exp(v.iter().copied()), -1e8);
        let all = [f64::NEG_INFINITY; 3];
        assert_eq!(log_sum_exp(all.iter().copied()), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_f32() {
        let v = [0.0_f32, 0.0];
        assert!((log_sum_exp(v.iter().copied()) - 2f32.ln()).abs() < 1e-6);
    }
}
