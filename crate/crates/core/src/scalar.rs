//! Numeric types for the statistics layers.
//!
//! Accuracies and money are computed in exact rationals so that identities
//! like `delta + p1 == p0` hold without tolerance; measures that are
//! irrational by nature (entropy, compression) use floats. The [`Scalar`]
//! trait lets the same fold run over either.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, Signed, ToPrimitive};

pub trait Scalar: Num + Signed + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: u64) -> Self;
    fn to_f64_lossy(&self) -> f64;

    /// `num / den`, or zero when `den` is zero.
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::from_count(num) / Self::from_count(den)
        }
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count fits in i64"))
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(n as i128)
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    let sum = values.iter().cloned().fold(S::zero(), |a, b| a + b);
    sum / S::from_count(values.len() as u64)
}

/// Rounds `value * 10^digits` half away from zero and returns the decimal
/// text, without going through a float.
pub fn round_decimal<T>(value: &Ratio<T>, digits: u32) -> String
where
    T: num_integer::Integer + Clone + Signed + ToString + From<u8>,
{
    let ten: T = T::from(10u8);
    let mut scale = T::one();
    for _ in 0..digits {
        scale = scale * ten.clone();
    }
    let scaled = (value.clone() * Ratio::from_integer(scale.clone())).round().to_integer();
    let negative = scaled.is_negative();
    let magnitude = scaled.abs();
    let int_part = magnitude.clone() / scale.clone();
    let frac_part = magnitude % scale;
    let sign = if negative { "-" } else { "" };
    if digits == 0 {
        format!("{sign}{}", int_part.to_string())
    } else {
        format!(
            "{sign}{}.{:0>width$}",
            int_part.to_string(),
            frac_part.to_string(),
            width = digits as usize
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_exact() {
        let a = <Ratio<i64>>::ratio(145, 351);
        let b = <Ratio<i64>>::ratio(83, 351);
        assert_eq!(a - b + b, a);
        assert_eq!(<f64>::ratio(1, 0), 0.0);
    }

    #[test]
    fn decimal_rounding_is_half_away_from_zero() {
        assert_eq!(round_decimal(&Ratio::new(1i64, 8), 2), "0.13");
        assert_eq!(round_decimal(&Ratio::new(-1i64, 8), 2), "-0.13");
        assert_eq!(round_decimal(&Ratio::new(3155i128, 1000), 2), "3.16");
        assert_eq!(round_decimal(&Ratio::new(1368i64, 100), 2), "13.68");
        assert_eq!(round_decimal(&Ratio::new(-1i64, 1000), 1), "0.0");
        assert_eq!(round_decimal(&Ratio::new(-3i64, 10), 1), "-0.3");
        assert_eq!(round_decimal(&Ratio::new(7i64, 2), 0), "4");
    }

    #[test]
    fn mean_over_scalars() {
        assert_eq!(mean(&[1.0f64, 3.0]), 2.0);
        assert_eq!(mean(&[Ratio::from_integer(1i64), Ratio::from_integer(2)]), Ratio::new(3, 2));
        assert_eq!(mean::<f32>(&[]), 0.0);
    }
}
