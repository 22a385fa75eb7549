//! Scalars that stay exact while they can.
//!
//! Recurrence and envelope iterates start out as small fractions (`6/5`,
//! `5/3`) and are carried as [`BigRational`] until their numerator or
//! denominator outgrows [`EXACT_BIT_LIMIT`]; from then on they are plain
//! doubles.

use std::cmp::Ordering;
use std::fmt;

use num::bigint::Sign;
use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

/// Numerator/denominator width past which exact values are demoted.
pub const EXACT_BIT_LIMIT: u64 = 512;

#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Exact(BigRational),
    Approx(f64),
}

impl Scalar {
    pub fn int(value: i64) -> Self {
        Scalar::Exact(BigRational::from_integer(BigInt::from(value)))
    }

    /// `numer/denom` as an exact value. Panics on a zero denominator.
    pub fn ratio(numer: i64, denom: i64) -> Self {
        Scalar::Exact(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn real(value: f64) -> Self {
        Scalar::Approx(value)
    }

    pub fn zero() -> Self {
        Scalar::int(0)
    }

    pub fn one() -> Self {
        Scalar::int(1)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Scalar::Exact(_))
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            Scalar::Exact(r) => Some(r),
            Scalar::Approx(_) => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Approx(v) => *v,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Exact(r) => r.is_zero(),
            Scalar::Approx(v) => *v == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Scalar::Exact(r) => r.is_one(),
            Scalar::Approx(v) => *v == 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Scalar::Exact(_) => true,
            Scalar::Approx(v) => v.is_finite(),
        }
    }

    /// Sign as -1, 0 or 1 (NaN maps to 0).
    pub fn signum(&self) -> i32 {
        match self {
            Scalar::Exact(r) => match r.numer().sign() {
                Sign::Minus => -1,
                Sign::NoSign => 0,
                Sign::Plus => 1,
            },
            Scalar::Approx(v) if *v > 0.0 => 1,
            Scalar::Approx(v) if *v < 0.0 => -1,
            Scalar::Approx(_) => 0,
        }
    }

    pub fn is_integer(&self) -> bool {
        match self {
            Scalar::Exact(r) => r.is_integer(),
            Scalar::Approx(v) => v.fract() == 0.0,
        }
    }

    /// Bit width of the wider of numerator and denominator (0 for doubles).
    pub fn bits(&self) -> u64 {
        match self {
            Scalar::Exact(r) => r.numer().bits().max(r.denom().bits()),
            Scalar::Approx(_) => 0,
        }
    }

    /// Demotes an exact value to a double once it is wider than `limit` bits.
    pub fn demote_if_wider(self, limit: u64) -> Self {
        if self.bits() > limit {
            Scalar::Approx(self.to_f64())
        } else {
            self
        }
    }

    pub fn to_approx(&self) -> Self {
        Scalar::Approx(self.to_f64())
    }

    pub fn neg(&self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(-r),
            Scalar::Approx(v) => Scalar::Approx(-v),
        }
    }

    pub fn abs(&self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(r.abs()),
            Scalar::Approx(v) => Scalar::Approx(v.abs()),
        }
    }

    pub fn add(&self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(a + b),
            _ => Scalar::Approx(self.to_f64() + rhs.to_f64()),
        }
    }

    pub fn sub(&self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(a - b),
            _ => Scalar::Approx(self.to_f64() - rhs.to_f64()),
        }
    }

    pub fn mul(&self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(a * b),
            _ => Scalar::Approx(self.to_f64() * rhs.to_f64()),
        }
    }

    /// `None` on an exact or floating zero divisor.
    pub fn div(&self, rhs: &Scalar) -> Option<Scalar> {
        if rhs.is_zero() {
            return None;
        }
        Some(match (self, rhs) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(a / b),
            _ => Scalar::Approx(self.to_f64() / rhs.to_f64()),
        })
    }

    /// Integer power; `None` for a negative power of zero.
    pub fn powi(&self, exp: i32) -> Option<Scalar> {
        match self {
            Scalar::Exact(r) => {
                if exp < 0 && r.is_zero() {
                    return None;
                }
                Some(Scalar::Exact(num::pow::Pow::pow(r, exp)))
            }
            Scalar::Approx(v) => {
                if exp < 0 && *v == 0.0 {
                    return None;
                }
                Some(Scalar::Approx(v.powi(exp)))
            }
        }
    }

    /// Exact comparison when both sides are exact, otherwise on doubles.
    pub fn compare(&self, rhs: &Scalar) -> Option<Ordering> {
        match (self, rhs) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Some(a.cmp(b)),
            _ => self.to_f64().partial_cmp(&rhs.to_f64()),
        }
    }

    /// `|self - rhs|` as a double.
    pub fn distance(&self, rhs: &Scalar) -> f64 {
        self.sub(rhs).abs().to_f64()
    }

    /// Exact decimal rendering when the value has a terminating expansion.
    pub fn terminating_decimal(&self) -> Option<String> {
        let r = self.as_exact()?;
        let denom = r.denom().clone();
        let mut d = denom.clone();
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        let (mut twos, mut fives) = (0u32, 0u32);
        while (&d % &two).is_zero() {
            d /= &two;
            twos += 1;
        }
        while (&d % &five).is_zero() {
            d /= &five;
            fives += 1;
        }
        if !d.is_one() {
            return None;
        }
        let digits = twos.max(fives);
        let scaled = r.numer() * num::pow::pow(BigInt::from(10), digits as usize) / &denom;
        let negative = scaled.is_negative();
        let mut body = scaled.abs().to_string();
        if digits > 0 {
            let width = digits as usize + 1;
            if body.len() < width {
                body = format!("{}{}", "0".repeat(width - body.len()), body);
            }
            body.insert(body.len() - digits as usize, '.');
        }
        Some(if negative { format!("-{body}") } else { body })
    }
}

impl From<BigRational> for Scalar {
    fn from(r: BigRational) -> Self {
        Scalar::Exact(r)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Approx(v)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Scalar::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Scalar::Approx(v) => write!(f, "{v:?}"),
        }
    }
}

impl serde::Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_arithmetic_stays_exact() {
        let a = Scalar::int(2);
        let step = Scalar::int(2).sub(&Scalar::int(4).div(&a.add(&Scalar::int(3))).unwrap());
        assert_eq!(step, Scalar::ratio(6, 5));
    }

    #[test]
    fn mixed_arithmetic_demotes() {
        let v = Scalar::ratio(1, 3).add(&Scalar::real(0.5));
        assert!(!v.is_exact());
        assert!((v.to_f64() - (1.0 / 3.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_rejected() {
        assert!(Scalar::one().div(&Scalar::zero()).is_none());
        assert!(Scalar::real(1.0).div(&Scalar::real(0.0)).is_none());
        assert!(Scalar::zero().powi(-1).is_none());
    }

    #[test]
    fn demotion_threshold() {
        let wide = Scalar::Exact(BigRational::new(
            num::pow::pow(BigInt::from(3), 400),
            num::pow::pow(BigInt::from(2), 600),
        ));
        assert!(wide.bits() > EXACT_BIT_LIMIT);
        assert!(!wide.clone().demote_if_wider(EXACT_BIT_LIMIT).is_exact());
        assert!(Scalar::ratio(6, 5).demote_if_wider(EXACT_BIT_LIMIT).is_exact());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(Scalar::ratio(1, 2).terminating_decimal().as_deref(), Some("0.5"));
        assert_eq!(Scalar::ratio(-3, 8).terminating_decimal().as_deref(), Some("-0.375"));
        assert_eq!(Scalar::ratio(1, 1000).terminating_decimal().as_deref(), Some("0.001"));
        assert_eq!(Scalar::int(12).terminating_decimal().as_deref(), Some("12"));
        assert_eq!(Scalar::ratio(2, 3).terminating_decimal(), None);
    }
}
