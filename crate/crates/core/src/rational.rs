//! Exact rational scalars and vectors with a bit-length measure.
//!
//! The bit-length of `p/q` in lowest terms is `bits(|p|) + bits(q)`, where
//! `bits(m)` is the length of the binary representation of `m` and
//! `bits(0) = 1`. The sign carries no bits. A vector's bit-length is the sum
//! of its entries' bit-lengths.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};

/// Number of binary digits of `m`, with `bits(0) = 1`.
pub fn bits(m: &BigUint) -> u64 {
    m.bits().max(1)
}

/// An exact rational number, always stored in lowest terms with a positive
/// denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rat(BigRational);

impl Rat {
    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }

    /// `num / den`, reduced. Returns an error when `den == 0`.
    pub fn new(num: i64, den: i64) -> Result<Self> {
        Self::from_big(BigInt::from(num), BigInt::from(den))
    }

    pub fn from_big(num: BigInt, den: BigInt) -> Result<Self> {
        if den.is_zero() {
            return Err(LabError::BadRational(format!("{num}/0")));
        }
        Ok(Rat(BigRational::new(num, den)))
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// `bits(|num|) + bits(den)`.
    pub fn bitlen(&self) -> u64 {
        bits(self.numer().magnitude()) + bits(self.denom().magnitude())
    }

    pub fn max(self, other: Rat) -> Rat {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn relu(&self) -> Rat {
        if self.is_negative() {
            Rat::zero()
        } else {
            self.clone()
        }
    }

    /// The reciprocal of a positive integer, `1/n`.
    pub fn recip_of(n: u64) -> Result<Rat> {
        Self::from_big(BigInt::one(), BigInt::from(n))
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }

    /// Exact cross-multiplication comparison, independent of the stored
    /// ordering. Used to audit [`Ord`].
    pub fn cross_cmp(&self, other: &Rat) -> Ordering {
        (self.numer() * other.denom()).cmp(&(other.numer() * self.denom()))
    }
}

impl From<BigRational> for Rat {
    fn from(r: BigRational) -> Self {
        // Ratio::new normalises; values produced by arithmetic already are.
        Rat(r)
    }
}

impl From<i64> for Rat {
    fn from(n: i64) -> Self {
        Rat::from_int(n)
    }
}

impl Add for Rat {
    type Output = Rat;
    fn add(self, rhs: Rat) -> Rat {
        Rat(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Rat> for &'a Rat {
    type Output = Rat;
    fn add(self, rhs: &'a Rat) -> Rat {
        Rat(&self.0 + &rhs.0)
    }
}

impl Mul for Rat {
    type Output = Rat;
    fn mul(self, rhs: Rat) -> Rat {
        Rat(self.0 * rhs.0)
    }
}

impl<'a> Mul<&'a Rat> for &'a Rat {
    type Output = Rat;
    fn mul(self, rhs: &'a Rat) -> Rat {
        Rat(&self.0 * &rhs.0)
    }
}

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

fn parse_digits(s: &str) -> Option<BigUint> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    BigUint::parse_bytes(s.as_bytes(), 10)
}

impl FromStr for Rat {
    type Err = LabError;

    /// Accepts `p`, `-p`, `p/q` and `-p/q` with decimal digits only.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || LabError::BadRational(s.to_string());
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (num, den) = match body.split_once('/') {
            Some((p, q)) => (parse_digits(p).ok_or_else(bad)?, parse_digits(q).ok_or_else(bad)?),
            None => (parse_digits(body).ok_or_else(bad)?, BigUint::one()),
        };
        if den.is_zero() {
            return Err(bad());
        }
        let sign = if negative { Sign::Minus } else { Sign::Plus };
        Rat::from_big(BigInt::from_biguint(sign, num), BigInt::from(den))
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fixed-dimension vector of rationals.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RVec(Vec<Rat>);

impl RVec {
    pub fn new(entries: Vec<Rat>) -> Self {
        RVec(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        RVec(vec![Rat::zero(); dim])
    }

    pub fn ones(dim: usize) -> Self {
        RVec(vec![Rat::one(); dim])
    }

    pub fn from_ints(values: &[i64]) -> Self {
        RVec(values.iter().map(|&v| Rat::from_int(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[Rat] {
        &self.0
    }

    pub fn into_entries(self) -> Vec<Rat> {
        self.0
    }

    pub fn bitlen(&self) -> u64 {
        self.0.iter().map(Rat::bitlen).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Rat::is_zero)
    }

    fn check_dim(&self, other: &RVec, context: &'static str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(LabError::DimensionMismatch {
                context,
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &RVec) -> Result<RVec> {
        self.check_dim(other, "vector add")?;
        Ok(RVec(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// Entry-wise maximum.
    pub fn pointwise_max(&self, other: &RVec) -> Result<RVec> {
        self.check_dim(other, "vector max")?;
        Ok(RVec(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| if b > a { b.clone() } else { a.clone() })
                .collect(),
        ))
    }

    pub fn scale(&self, factor: &Rat) -> RVec {
        RVec(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn relu(&self) -> RVec {
        RVec(self.0.iter().map(Rat::relu).collect())
    }

    /// Concatenation `(self, other)`.
    pub fn concat(&self, other: &RVec) -> RVec {
        let mut entries = Vec::with_capacity(self.dim() + other.dim());
        entries.extend_from_slice(&self.0);
        entries.extend_from_slice(&other.0);
        RVec(entries)
    }
}

impl From<Vec<Rat>> for RVec {
    fn from(entries: Vec<Rat>) -> Self {
        RVec(entries)
    }
}

impl fmt::Display for RVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, q) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{q}")?;
        }
        f.write_str("]")
    }
}

impl fmt::Debug for RVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_integer::Integer;
    use proptest::prelude::*;

    fn r(s: &str) -> Rat {
        s.parse().unwrap()
    }

    #[test]
    fn scalar_bitlen() {
        assert_eq!(Rat::zero().bitlen(), 2);
        assert_eq!(Rat::from_int(5).bitlen(), 4);
        assert_eq!(r("3/2").bitlen(), 4);
        assert_eq!(r("-3/2").bitlen(), 4);
    }

    #[test]
    fn vector_bitlen() {
        assert_eq!(RVec::ones(2).bitlen(), 4);
        assert_eq!(RVec::zeros(1).bitlen(), 2);
        assert_eq!(RVec::new(vec![r("3/2"), r("5")]).bitlen(), 8);
    }

    #[test]
    fn arithmetic() {
        assert_eq!(r("1/2") + r("1/3"), r("5/6"));
        assert_eq!(r("2/3") * r("3/2"), Rat::one());
        assert_eq!(r("-1/2").max(Rat::zero()), Rat::zero());
        assert_eq!(-r("3/4"), r("-3/4"));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(r("-3/2").to_string(), "-3/2");
        assert_eq!(r("7").to_string(), "7");
        assert_eq!(r("4/2").to_string(), "2");
        assert_eq!(r("-0").to_string(), "0");
        for bad in ["1/0", " 1", "1 ", "1/ 2", "+1", "", "-", "1/", "/2", "1/-2", "--1", "1.5", "0x10"] {
            assert!(bad.parse::<Rat>().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn vector_dims_checked() {
        let a = RVec::ones(2);
        let b = RVec::ones(3);
        assert!(matches!(a.add(&b), Err(LabError::DimensionMismatch { .. })));
        assert!(a.pointwise_max(&b).is_err());
    }

    fn small_rat() -> impl Strategy<Value = Rat> {
        (-100_000i64..100_000, 1i64..100_000).prop_map(|(p, q)| Rat::new(p, q).unwrap())
    }

    fn lowest_terms(q: &Rat) -> bool {
        q.numer().gcd(q.denom()) == BigInt::one() && q.denom() >= &BigInt::one()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn bitlen_at_least_two_and_sign_free(q in small_rat()) {
            prop_assert!(q.bitlen() >= 2);
            prop_assert_eq!(q.bitlen(), (-q.clone()).bitlen());
        }

        #[test]
        fn integer_product_bitlen_subadditive(a in 1i64..1_000_000, b in 1i64..1_000_000,
                                              sa in any::<bool>(), sb in any::<bool>()) {
            let a = Rat::from_int(if sa { -a } else { a });
            let b = Rat::from_int(if sb { -b } else { b });
            prop_assert!((&a * &b).bitlen() <= a.bitlen() + b.bitlen());
        }

        #[test]
        fn results_in_lowest_terms(a in small_rat(), b in small_rat()) {
            prop_assert!(lowest_terms(&(&a + &b)));
            prop_assert!(lowest_terms(&(&a * &b)));
        }

        #[test]
        fn compare_matches_cross_multiplication(a in small_rat(), b in small_rat()) {
            prop_assert_eq!(a.cmp(&b), a.cross_cmp(&b));
        }

        #[test]
        fn literal_round_trip(q in small_rat()) {
            prop_assert_eq!(q.to_string().parse::<Rat>().unwrap(), q);
        }
    }
}
