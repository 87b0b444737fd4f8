//! Exact rational compression rates.
//!
//! Budget arithmetic has to be reproducible across platforms: a clamp or
//! keep-count decision made at `floor((1 - 0.3) * 10)` must not depend on
//! whether `0.3` rounded up or down when it became a float. Rates are
//! therefore exact rationals; `f64` only appears at the edges (policy
//! actions in, report numbers out), and the f64-to-rational conversion is
//! exact because every finite f64 is dyadic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use std::fmt;

use crate::error::{Error, Result};

/// An exact rational number used for compression rates and budget math.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rate(BigRational);

impl Rate {
    pub fn zero() -> Self {
        Rate(BigRational::zero())
    }

    pub fn one() -> Self {
        Rate(BigRational::one())
    }

    pub fn from_ratio(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidRate("denominator is zero".into()));
        }
        Ok(Rate(BigRational::new(BigInt::from(num), BigInt::from(den))))
    }

    /// Parses a plain decimal string ("0.3", "0.25", "1") into an exact
    /// rational. This is how rates enter from the CLI and config files.
    pub fn parse_decimal(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidRate(format!("'{s}' is not a decimal number"));
        let (sign, digits) = match s.strip_prefix('-') {
            Some(rest) => (-1i64, rest),
            None => (1, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let mut num = BigInt::zero();
        for c in int_part.chars().chain(frac_part.chars()) {
            num = num * 10 + (c as u8 - b'0');
        }
        let den = BigInt::from(10u32).pow(frac_part.len() as u32);
        Ok(Rate(BigRational::new(num * sign, den)))
    }

    /// Exact conversion from a finite f64 (every finite f64 is a dyadic
    /// rational). Used for policy actions entering the budget math.
    pub fn from_f64_exact(v: f64) -> Result<Self> {
        BigRational::from_f64(v)
            .map(Rate)
            .ok_or_else(|| Error::InvalidRate(format!("{v} is not finite")))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// True when `self` lies in the open interval (0, 1).
    pub fn in_open_unit(&self) -> bool {
        self.0 > BigRational::zero() && self.0 < BigRational::one()
    }

    /// True when `self` lies in (0, 1].
    pub fn in_half_open_unit(&self) -> bool {
        self.0 > BigRational::zero() && self.0 <= BigRational::one()
    }

    pub fn min(self, other: Self) -> Self {
        if self.0 <= other.0 {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self.0 >= other.0 {
            self
        } else {
            other
        }
    }

    /// `floor(self * n)` as an integer, exact.
    pub fn floor_mul(&self, n: u64) -> i64 {
        let prod = &self.0 * BigRational::from_integer(BigInt::from(n));
        prod.floor().to_integer().to_i64().unwrap_or(i64::MAX)
    }

    /// Numerator and denominator when both fit in i64 (CLI-provided rates
    /// always do; policy-action dyadics may not).
    pub fn to_i64_ratio(&self) -> Option<(i64, i64)> {
        Some((self.0.numer().to_i64()?, self.0.denom().to_i64()?))
    }

    pub(crate) fn as_big(&self) -> &BigRational {
        &self.0
    }

    pub(crate) fn from_big(r: BigRational) -> Self {
        Rate(r)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl std::ops::Sub for &Rate {
    type Output = Rate;
    fn sub(self, rhs: &Rate) -> Rate {
        Rate(&self.0 - &rhs.0)
    }
}

impl std::ops::Add for &Rate {
    type Output = Rate;
    fn add(self, rhs: &Rate) -> Rate {
        Rate(&self.0 + &rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_decimal_is_exact() {
        let r = Rate::parse_decimal("0.3").unwrap();
        assert_eq!(r, Rate::from_ratio(3, 10).unwrap());
        // The f64 route would give 0.2999999999999999888...
        assert_ne!(r, Rate::from_f64_exact(0.3).unwrap());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Rate::parse_decimal("abc").is_err());
        assert!(Rate::parse_decimal("").is_err());
        assert!(Rate::parse_decimal("1.2.3").is_err());
    }

    #[test]
    fn floor_mul_rounds_down_exactly() {
        // (1 - 0.3) * 10 = 7 exactly; through f64 this lands on 6.
        let keep = Rate::parse_decimal("0.7").unwrap();
        assert_eq!(keep.floor_mul(10), 7);
        let r = Rate::parse_decimal("0.37").unwrap();
        let keep = &Rate::one() - &r;
        assert_eq!(keep.floor_mul(10), 6);
    }

    #[test]
    fn unit_interval_checks() {
        assert!(Rate::parse_decimal("0.5").unwrap().in_open_unit());
        assert!(!Rate::one().in_open_unit());
        assert!(Rate::one().in_half_open_unit());
        assert!(!Rate::zero().in_half_open_unit());
    }
}
