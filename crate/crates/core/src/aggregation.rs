//! Multiset aggregations and their output-complexity measurement.
//!
//! `S_agg(n, k)` is the largest bit-length `agg` can produce on a multiset of
//! `n` scalars, each of bit-length at most `k`. It is either computed exactly
//! by enumerating every multiset over a value domain, or estimated from below
//! by sampling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rational::{RVec, Rat};
use crate::sample;

/// Default cap on the number of multisets an exhaustive measurement visits.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Sum, Aggregator::Mean, Aggregator::Max];

    /// Dimension-wise aggregation of `items`, each of dimension `dim`.
    /// The empty multiset aggregates to the zero vector.
    pub fn aggregate(&self, dim: usize, items: &[RVec]) -> Result<RVec> {
        if let Some(bad) = items.iter().find(|v| v.dim() != dim) {
            return Err(LabError::DimensionMismatch {
                context: "aggregation element",
                expected: dim,
                got: bad.dim(),
            });
        }
        let Some((first, rest)) = items.split_first() else {
            return Ok(RVec::zeros(dim));
        };
        let mut acc = first.clone();
        for v in rest {
            acc = match self {
                Aggregator::Sum | Aggregator::Mean => acc.add(v)?,
                Aggregator::Max => acc.pointwise_max(v)?,
            };
        }
        if *self == Aggregator::Mean && items.len() > 1 {
            acc = acc.scale(&Rat::recip_of(items.len() as u64)?);
        }
        Ok(acc)
    }

    /// Scalar form used by the complexity harness.
    pub fn aggregate_scalars(&self, items: &[Rat]) -> Rat {
        let Some((first, rest)) = items.split_first() else {
            return Rat::zero();
        };
        match self {
            Aggregator::Sum | Aggregator::Mean => {
                let sum = rest.iter().fold(first.clone(), |acc, q| &acc + q);
                if *self == Aggregator::Mean {
                    &sum * &Rat::recip_of(items.len() as u64).expect("nonzero length")
                } else {
                    sum
                }
            }
            Aggregator::Max => rest.iter().fold(first.clone(), |acc, q| acc.max(q.clone())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregator::Sum),
            "mean" | "avg" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(LabError::Parse(format!("unknown aggregator {other:?}"))),
        }
    }
}

/// Which rationals are admitted as multiset elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueDomain {
    /// Denominator 1.
    Integer,
    /// Denominator a power of two.
    Dyadic,
    /// Unrestricted.
    Rational,
}

impl ValueDomain {
    pub fn name(&self) -> &'static str {
        match self {
            ValueDomain::Integer => "integer",
            ValueDomain::Dyadic => "dyadic",
            ValueDomain::Rational => "rational",
        }
    }

    /// Every value of the domain with bit-length at most `k`, ascending.
    pub fn values_up_to(&self, k: u32) -> Vec<Rat> {
        let mut out = Vec::new();
        if k < 2 {
            return out;
        }
        let pow = |b: u32| 1i64 << b;
        match self {
            ValueDomain::Integer => {
                let m = pow(k - 1) - 1;
                out.extend((-m..=m).map(Rat::from_int));
            }
            ValueDomain::Dyadic => {
                let m = pow(k - 1) - 1;
                out.extend((-m..=m).map(Rat::from_int));
                // a / 2^e with a odd and bits(|a|) + e + 1 <= k
                let mut e = 1;
                while k >= e + 2 {
                    let bound = pow(k - e - 1);
                    for a in (1..bound).step_by(2) {
                        out.push(Rat::new(a, pow(e)).unwrap());
                        out.push(Rat::new(-a, pow(e)).unwrap());
                    }
                    e += 1;
                }
            }
            ValueDomain::Rational => {
                for den_bits in 1..k {
                    for q in pow(den_bits - 1)..pow(den_bits) {
                        let num_bound = pow(k - den_bits);
                        for p in 0..num_bound {
                            if num_integer::gcd(p, q) != 1 && !(p == 0 && q == 1) {
                                continue;
                            }
                            out.push(Rat::new(p, q).unwrap());
                            if p != 0 {
                                out.push(Rat::new(-p, q).unwrap());
                            }
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// A random value of the domain with bit-length at most `k`.
    pub fn sample(&self, rng: &mut impl Rng, k: u32) -> Rat {
        match self {
            ValueDomain::Integer => sample::int_with_bitlen_at_most(rng, k),
            ValueDomain::Rational => sample::rat_with_bitlen_at_most(rng, k),
            ValueDomain::Dyadic => {
                // exponent e leaves at least one numerator bit
                let e = rng.gen_range(0..=k.saturating_sub(2));
                if e == 0 {
                    return sample::int_with_bitlen_at_most(rng, k);
                }
                let num = sample::odd_below_pow2(rng, k - e - 1);
                let num = if rng.gen_bool(0.5) { -num } else { num };
                Rat::new(num, 1i64 << e).unwrap()
            }
        }
    }

    /// Largest-magnitude integer of bit-length at most `k`: `2^(k-1) - 1`.
    fn max_integer(k: u32) -> Rat {
        Rat::from_int((1i64 << (k - 1)) - 1)
    }
}

impl FromStr for ValueDomain {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integer" => Ok(ValueDomain::Integer),
            "dyadic" => Ok(ValueDomain::Dyadic),
            "rational" => Ok(ValueDomain::Rational),
            other => Err(LabError::Parse(format!("unknown value domain {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum MeasureMode {
    /// Every multiset over the domain; refused above the enumeration cap.
    Exhaustive,
    /// Corner multisets plus `samples` random ones.
    Sampled { samples: usize },
    /// The reciprocals of the first `n` odd primes `p` with `<1/p> <= k`.
    ReciprocalPrimes,
}

impl MeasureMode {
    pub fn name(&self) -> &'static str {
        match self {
            MeasureMode::Exhaustive => "exhaustive",
            MeasureMode::Sampled { .. } => "sampled",
            MeasureMode::ReciprocalPrimes => "reciprocal-primes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub n: usize,
    pub k: u32,
    pub s: u64,
    pub multisets: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    pub aggregator: Aggregator,
    pub mode: MeasureMode,
    pub domain: ValueDomain,
    pub rows: Vec<ProfileRow>,
}

impl ComplexityProfile {
    pub const CSV_HEADER: &'static str = "n,k,s,mode,domain";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.n,
                row.k,
                row.s,
                self.mode.name(),
                self.domain.name()
            ));
        }
        out
    }
}

/// `C(values + n - 1, n)`, saturating.
pub fn multiset_count(values: usize, n: usize) -> u128 {
    if values == 0 {
        return if n == 0 { 1 } else { 0 };
    }
    binomial((values + n - 1) as u128, n as u128)
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        match acc.checked_mul(n - i) {
            Some(v) => acc = v / (i + 1),
            None => return u128::MAX,
        }
    }
    acc
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Odd primes in ascending order, as many as exist below `limit`.
pub fn odd_primes_below(limit: u64) -> Vec<u64> {
    let limit = limit as usize;
    if limit < 3 {
        return Vec::new();
    }
    let mut composite = vec![false; limit];
    let mut out = Vec::new();
    for p in 2..limit {
        if composite[p] {
            continue;
        }
        if p > 2 {
            out.push(p as u64);
        }
        let mut m = p * p;
        while m < limit {
            composite[m] = true;
            m += p;
        }
    }
    out
}

/// Visits every non-decreasing index tuple of length `n` over `values`.
fn for_each_multiset(values: &[Rat], n: usize, mut visit: impl FnMut(&[Rat])) {
    let mut idx = vec![0usize; n];
    let mut buf: Vec<Rat> = vec![values[0].clone(); n];
    loop {
        visit(&buf);
        // advance to the next non-decreasing tuple
        let mut pos = n;
        while pos > 0 && idx[pos - 1] == values.len() - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return;
        }
        let next = idx[pos - 1] + 1;
        for i in pos - 1..n {
            idx[i] = next;
            buf[i] = values[next].clone();
        }
    }
}

fn corner_multisets(domain: ValueDomain, n: usize, k: u32) -> Vec<Vec<Rat>> {
    let top = ValueDomain::max_integer(k);
    let mut corners = vec![vec![top.clone(); n], vec![-top.clone(); n]];
    if n > 1 {
        let mut lone = vec![Rat::zero(); n];
        lone[0] = top.clone();
        corners.push(lone);
        let mut mixed = vec![Rat::one(); n];
        mixed[0] = top;
        corners.push(mixed);
    }
    if domain != ValueDomain::Integer && k >= 3 {
        // smallest positive dyadic 1/2^(k-2)
        let tiny = Rat::new(1, 1i64 << (k - 2)).unwrap();
        corners.push(vec![tiny; n]);
    }
    corners
}

fn row_seed(seed: u64, n: usize, k: u32) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 48)
}

/// One `(n, k)` measurement of `S_agg`.
pub fn measure_agg_complexity(
    agg: Aggregator,
    n: usize,
    k: u32,
    mode: MeasureMode,
    domain: ValueDomain,
    seed: u64,
    cap: u128,
) -> Result<ProfileRow> {
    if n == 0 {
        return Err(LabError::invalid("multiset size must be at least 1"));
    }
    if !(2..=62).contains(&k) {
        return Err(LabError::invalid(format!("element bit budget {k} outside 2..=62")));
    }
    let mut s = 0u64;
    let mut visited: u128 = 0;
    match mode {
        MeasureMode::Exhaustive => {
            let values = domain.values_up_to(k);
            let count = multiset_count(values.len(), n);
            if count > cap {
                return Err(LabError::CapExceeded {
                    what: "exhaustive multiset enumeration".to_string(),
                    requested: count,
                    cap,
                });
            }
            for_each_multiset(&values, n, |m| {
                s = s.max(agg.aggregate_scalars(m).bitlen());
                visited += 1;
            });
        }
        MeasureMode::Sampled { samples } => {
            let mut rng = sample::rng(row_seed(seed, n, k));
            for m in corner_multisets(domain, n, k) {
                s = s.max(agg.aggregate_scalars(&m).bitlen());
                visited += 1;
            }
            let mut m = Vec::with_capacity(n);
            for _ in 0..samples {
                m.clear();
                m.extend((0..n).map(|_| domain.sample(&mut rng, k)));
                s = s.max(agg.aggregate_scalars(&m).bitlen());
                visited += 1;
            }
        }
        MeasureMode::ReciprocalPrimes => {
            if domain != ValueDomain::Rational {
                return Err(LabError::invalid("reciprocal primes need the rational domain"));
            }
            // <1/p> = 1 + bits(p) <= k  <=>  p < 2^(k-1)
            let primes = odd_primes_below(1u64 << (k - 1));
            if primes.len() < n {
                return Err(LabError::invalid(format!(
                    "only {} odd primes have <1/p> <= {k}, need {n}",
                    primes.len()
                )));
            }
            let m: Vec<Rat> = primes[..n]
                .iter()
                .map(|&p| Rat::recip_of(p).unwrap())
                .collect();
            s = agg.aggregate_scalars(&m).bitlen();
            visited = 1;
        }
    }
    Ok(ProfileRow { n, k, s, multisets: visited })
}

pub fn measure_profile(
    agg: Aggregator,
    schedule: &[(usize, u32)],
    mode: MeasureMode,
    domain: ValueDomain,
    seed: u64,
    cap: u128,
) -> Result<ComplexityProfile> {
    let rows = schedule
        .iter()
        .map(|&(n, k)| measure_agg_complexity(agg, n, k, mode, domain, seed, cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexityProfile { aggregator: agg, mode, domain, rows })
}

/// `(n, ceil(log2 n) + offset)` for each `n`.
pub fn log_schedule(ns: &[usize], offset: u32) -> Vec<(usize, u32)> {
    ns.iter().map(|&n| (n, ceil_log2(n as u64) + offset)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthFit {
    LogConsistent,
    SublinearConsistent,
    SuperlinearEvidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub fit: GrowthFit,
    /// `s ~ log_coef * log2 n + log_intercept`
    pub log_coef: f64,
    pub log_intercept: f64,
    pub log_residual: f64,
    /// `s ~ linear_coef * n`
    pub linear_coef: f64,
    pub linear_residual: f64,
    pub curve: ComplexityProfile,
    pub note: String,
}

/// Fits the closed-form least-squares models to a measured curve.
pub fn classify_profile(curve: ComplexityProfile) -> Result<Classification> {
    if curve.rows.len() < 4 {
        return Err(LabError::invalid(format!(
            "classification needs at least 4 schedule points, got {}",
            curve.rows.len()
        )));
    }
    let pts: Vec<(f64, f64)> = curve.rows.iter().map(|r| (r.n as f64, r.s as f64)).collect();

    let logs: Vec<(f64, f64)> = pts.iter().map(|&(n, s)| (n.log2(), s)).collect();
    let line = crate::mlp::LinearFit::fit(&logs);
    let log_residual: f64 = logs
        .iter()
        .map(|&(x, s)| (s - (line.slope * x + line.intercept)).powi(2))
        .sum();

    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let linear_coef = sxy / sxx;
    let linear_residual: f64 = pts.iter().map(|&(n, s)| (s - linear_coef * n).powi(2)).sum();

    let last = curve.rows.iter().max_by_key(|r| r.n).expect("nonempty");
    let fit = if (last.s as f64) > last.n as f64 / 4.0 {
        GrowthFit::SuperlinearEvidence
    } else if log_residual <= linear_residual {
        GrowthFit::LogConsistent
    } else {
        GrowthFit::SublinearConsistent
    };
    Ok(Classification {
        fit,
        log_coef: line.slope,
        log_intercept: line.intercept,
        log_residual,
        linear_coef,
        linear_residual,
        curve,
        note: "finite-sample evidence only; a fit is not a proof of growth rate".to_string(),
    })
}

pub fn classify_agg(
    agg: Aggregator,
    schedule: &[(usize, u32)],
    mode: MeasureMode,
    domain: ValueDomain,
    seed: u64,
    cap: u128,
) -> Result<Classification> {
    if schedule.len() < 4 {
        return Err(LabError::invalid(format!(
            "classification needs at least 4 schedule points, got {}",
            schedule.len()
        )));
    }
    classify_profile(measure_profile(agg, schedule, mode, domain, seed, cap)?)
}
