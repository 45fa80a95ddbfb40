//! Directed-rounding interval arithmetic on `f64` endpoints.
//!
//! Every certified quantity in this crate is carried by an [`IntervalScalar`]:
//! a closed interval `[lo, hi]` whose endpoints are ordinary doubles. All
//! operations round outward, so the result interval always contains the exact
//! real result of applying the operation to any reals inside the inputs.
//!
//! Basic arithmetic relies on IEEE-754 operations being correctly rounded:
//! nudging the computed endpoint one ulp outward covers the true value.
//! Elementary functions (`exp`, `log`, `cbrt`) come from the platform libm,
//! assumed faithfully rounded, and are widened by [`ELEM_ULPS`] ulps per
//! endpoint (2 by default, 1 with the `tight-elementary` feature).

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Outward widening applied to faithfully-rounded elementary functions,
/// in ulps per endpoint.
#[cfg(not(feature = "tight-elementary"))]
pub const ELEM_ULPS: u32 = 2;
#[cfg(feature = "tight-elementary")]
pub const ELEM_ULPS: u32 = 1;

/// A closed real interval with outward-rounded endpoints.
///
/// Invariants: `lo <= hi`, neither endpoint is NaN. Infinite endpoints are
/// permitted; they mark quantities for which no finite enclosure is known.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct IntervalScalar {
    lo: f64,
    hi: f64,
}

impl IntervalScalar {
    pub const ZERO: IntervalScalar = IntervalScalar { lo: 0.0, hi: 0.0 };
    pub const ONE: IntervalScalar = IntervalScalar { lo: 1.0, hi: 1.0 };

    /// Interval from both endpoints. Panics if `lo > hi` or either is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(!lo.is_nan() && !hi.is_nan(), "NaN endpoint");
        assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        IntervalScalar { lo, hi }
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    /// The interval `[-inf, +inf]`, used as an "unknown" enclosure.
    pub fn whole() -> Self {
        IntervalScalar {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        sub_up(self.hi, self.lo)
    }

    pub fn midpoint(&self) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            let m = 0.5 * self.lo + 0.5 * self.hi;
            m.clamp(self.lo, self.hi)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &IntervalScalar) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersects(&self, other: &IntervalScalar) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn intersection(&self, other: &IntervalScalar) -> Option<IntervalScalar> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(IntervalScalar { lo, hi })
        } else {
            None
        }
    }

    pub fn hull(&self, other: &IntervalScalar) -> IntervalScalar {
        IntervalScalar {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn abs(&self) -> IntervalScalar {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            -*self
        } else {
            IntervalScalar {
                lo: 0.0,
                hi: self.hi.max(-self.lo),
            }
        }
    }

    pub fn min_i(&self, other: &IntervalScalar) -> IntervalScalar {
        IntervalScalar {
            lo: self.lo.min(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    pub fn max_i(&self, other: &IntervalScalar) -> IntervalScalar {
        IntervalScalar {
            lo: self.lo.max(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Splits at the midpoint. The halves overlap in one point.
    pub fn bisect(&self) -> (IntervalScalar, IntervalScalar) {
        let m = self.midpoint();
        (
            IntervalScalar {
                lo: self.lo,
                hi: m,
            },
            IntervalScalar {
                lo: m,
                hi: self.hi,
            },
        )
    }

    pub fn checked_div(&self, rhs: &IntervalScalar) -> Result<IntervalScalar, Error> {
        if rhs.contains(0.0) {
            return Err(Error::Domain(format!(
                "division by interval containing zero: {rhs}"
            )));
        }
        Ok(*self / *rhs)
    }

    pub fn recip(&self) -> Result<IntervalScalar, Error> {
        IntervalScalar::ONE.checked_div(self)
    }

    /// Exponential, widened per [`ELEM_ULPS`].
    pub fn exp(&self) -> IntervalScalar {
        IntervalScalar {
            lo: widen_down(self.lo.exp()).max(0.0),
            hi: widen_up(self.hi.exp()),
        }
    }

    /// Natural logarithm. The interval must be strictly positive.
    pub fn log(&self) -> Result<IntervalScalar, Error> {
        if self.lo <= 0.0 {
            return Err(Error::Domain(format!("log of non-positive interval {self}")));
        }
        Ok(IntervalScalar {
            lo: widen_down(self.lo.ln()),
            hi: widen_up(self.hi.ln()),
        })
    }

    /// Signed cube root, defined on all of R.
    pub fn cbrt(&self) -> IntervalScalar {
        IntervalScalar {
            lo: widen_down(self.lo.cbrt()),
            hi: widen_up(self.hi.cbrt()),
        }
    }

    /// Square root. Requires `lo >= 0`. IEEE sqrt is correctly rounded, so a
    /// single-ulp nudge suffices.
    pub fn sqrt(&self) -> Result<IntervalScalar, Error> {
        if self.lo < 0.0 {
            return Err(Error::Domain(format!("sqrt of negative interval {self}")));
        }
        Ok(IntervalScalar {
            lo: self.lo.sqrt().next_down().max(0.0),
            hi: self.hi.sqrt().next_up(),
        })
    }

    /// Dependency-aware square: `x*x` over a single variable.
    pub fn square(&self) -> IntervalScalar {
        let a = mul_down(self.lo, self.lo);
        let b = mul_up(self.lo, self.lo);
        let c = mul_down(self.hi, self.hi);
        let d = mul_up(self.hi, self.hi);
        if self.contains(0.0) {
            IntervalScalar {
                lo: 0.0,
                hi: b.max(d),
            }
        } else {
            IntervalScalar {
                lo: a.min(c),
                hi: b.max(d),
            }
        }
    }

    /// Integer power by repeated squaring and multiplication.
    pub fn pow_int(&self, n: i32) -> Result<IntervalScalar, Error> {
        if n < 0 {
            return self.pow_int(-n)?.recip();
        }
        let mut n = n as u32;
        if n == 0 {
            return Ok(IntervalScalar::ONE);
        }
        // Odd part keeps the sign; square() handles straddling intervals.
        let mut acc: Option<IntervalScalar> = None;
        let mut base = *self;
        loop {
            if n & 1 == 1 {
                acc = Some(match acc {
                    None => base,
                    Some(a) => a * base,
                });
            }
            n >>= 1;
            if n == 0 {
                break;
            }
            base = base.square();
        }
        Ok(acc.unwrap())
    }

    /// Fractional power `x^(num/den)` with signed-root semantics for odd
    /// denominators: `x^(1/3)` is defined on all of R, `x^(-2/3)` wherever
    /// `0` is excluded. Even denominators require `x >= 0`; denominators
    /// other than 1, 2, 3 route through `exp(num/den * log x)` and require a
    /// strictly positive interval.
    pub fn pow_frac(&self, num: i32, den: u32) -> Result<IntervalScalar, Error> {
        match den {
            0 => Err(Error::Domain("zero denominator in pow_frac".into())),
            1 => self.pow_int(num),
            2 => self.sqrt()?.pow_int(num),
            3 => {
                let root = self.cbrt();
                if num < 0 && root.contains(0.0) {
                    return Err(Error::Domain(format!(
                        "negative fractional power of interval containing zero: {self}"
                    )));
                }
                root.pow_int(num)
            }
            _ => {
                let l = self.log()?;
                let e = IntervalScalar::point(num as f64) / IntervalScalar::point(den as f64);
                Ok((l * e).exp())
            }
        }
    }

    /// Smallest machine interval containing the decimal literal `s`.
    pub fn from_decimal(s: &str) -> Result<IntervalScalar, Error> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad decimal literal {s:?}")))?;
        if !v.is_finite() {
            return Ok(if v > 0.0 {
                IntervalScalar {
                    lo: f64::MAX,
                    hi: f64::INFINITY,
                }
            } else {
                IntervalScalar {
                    lo: f64::NEG_INFINITY,
                    hi: f64::MIN,
                }
            });
        }
        match compare_decimal(s.trim(), v)? {
            std::cmp::Ordering::Equal => Ok(IntervalScalar::point(v)),
            std::cmp::Ordering::Greater => Ok(IntervalScalar {
                lo: v,
                hi: v.next_up(),
            }),
            std::cmp::Ordering::Less => Ok(IntervalScalar {
                lo: v.next_down(),
                hi: v,
            }),
        }
    }

    /// Interval spanning two decimal literals.
    pub fn from_decimal_pair(lo: &str, hi: &str) -> Result<IntervalScalar, Error> {
        let l = Self::from_decimal(lo)?;
        let h = Self::from_decimal(hi)?;
        if l.lo > h.hi {
            return Err(Error::Parse(format!("inverted decimal pair [{lo}, {hi}]")));
        }
        Ok(IntervalScalar {
            lo: l.lo,
            hi: h.hi,
        })
    }
}

/// Compares the exact decimal value of `s` against the exact value of the
/// double `v`. Works on integers scaled by powers of ten and two.
fn compare_decimal(s: &str, v: f64) -> Result<std::cmp::Ordering, Error> {
    let (mantissa, exp10) = split_decimal(s)?;
    // d = mantissa * 10^exp10, v = m2 * 2^e2 exactly.
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { -1i64 } else { 1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m2, e2): (u64, i64) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), exp_bits - 1075)
    };
    let mut left = mantissa; // d side
    let mut right = BigInt::from(sign) * BigInt::from(m2); // v side
    // Scale both to integers: d * 10^exp10  vs  m2 * 2^e2.
    if exp10 >= 0 {
        left *= BigInt::from(10u8).pow(exp10 as u32);
    } else {
        right *= BigInt::from(10u8).pow((-exp10) as u32);
    }
    if e2 >= 0 {
        right *= BigInt::from(2u8).pow(e2 as u32);
    } else {
        left *= BigInt::from(2u8).pow((-e2) as u32);
    }
    Ok(left.cmp(&right))
}

/// Parses a decimal literal into `(mantissa, exp10)` with
/// value = mantissa * 10^exp10.
fn split_decimal(s: &str) -> Result<(BigInt, i64), Error> {
    let bad = || Error::Parse(format!("bad decimal literal {s:?}"));
    let (s, sign) = match s.as_bytes().first() {
        Some(b'-') => (&s[1..], -1),
        Some(b'+') => (&s[1..], 1),
        _ => (s, 1),
    };
    let (body, exp_part) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i64>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match body.find('.') {
        Some(i) => (&body[..i], &body[i + 1..]),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let digits: String = int_part.chars().chain(frac_part.chars()).collect();
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let mantissa: BigInt = digits.parse::<BigInt>().map_err(|_| bad())? * BigInt::from(sign);
    Ok((mantissa, exp_part - frac_part.len() as i64))
}

fn widen_up(x: f64) -> f64 {
    let mut y = x;
    for _ in 0..ELEM_ULPS {
        y = y.next_up();
    }
    y
}

fn widen_down(x: f64) -> f64 {
    let mut y = x;
    for _ in 0..ELEM_ULPS {
        y = y.next_down();
    }
    y
}

// Additions and multiplications are nudged one ulp outward unless the
// error-free residual shows the float result is exact.

pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_nan() {
        return f64::NEG_INFINITY;
    }
    if s - a == b && s - b == a {
        return s;
    }
    s.next_down()
}

pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_nan() {
        return f64::INFINITY;
    }
    if s - a == b && s - b == a {
        return s;
    }
    s.next_up()
}

pub(crate) fn sub_down(a: f64, b: f64) -> f64 {
    add_down(a, -b)
}

pub(crate) fn sub_up(a: f64, b: f64) -> f64 {
    add_up(a, -b)
}

fn mul_down(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_nan() {
        return f64::NEG_INFINITY;
    }
    // The FMA residual is an exact test only away from underflow.
    if p.is_finite() && p.abs() > 1e-250 && a.mul_add(b, -p) == 0.0 {
        return p;
    }
    p.next_down()
}

fn mul_up(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_nan() {
        return f64::INFINITY;
    }
    if p.is_finite() && p.abs() > 1e-250 && a.mul_add(b, -p) == 0.0 {
        return p;
    }
    p.next_up()
}

impl Add for IntervalScalar {
    type Output = IntervalScalar;
    fn add(self, rhs: IntervalScalar) -> IntervalScalar {
        IntervalScalar {
            lo: add_down(self.lo, rhs.lo),
            hi: add_up(self.hi, rhs.hi),
        }
    }
}

impl Sub for IntervalScalar {
    type Output = IntervalScalar;
    fn sub(self, rhs: IntervalScalar) -> IntervalScalar {
        IntervalScalar {
            lo: sub_down(self.lo, rhs.hi),
            hi: sub_up(self.hi, rhs.lo),
        }
    }
}

impl Neg for IntervalScalar {
    type Output = IntervalScalar;
    fn neg(self) -> IntervalScalar {
        IntervalScalar {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for IntervalScalar {
    type Output = IntervalScalar;
    fn mul(self, rhs: IntervalScalar) -> IntervalScalar {
        let candidates_lo = [
            mul_down(self.lo, rhs.lo),
            mul_down(self.lo, rhs.hi),
            mul_down(self.hi, rhs.lo),
            mul_down(self.hi, rhs.hi),
        ];
        let candidates_hi = [
            mul_up(self.lo, rhs.lo),
            mul_up(self.lo, rhs.hi),
            mul_up(self.hi, rhs.lo),
            mul_up(self.hi, rhs.hi),
        ];
        IntervalScalar {
            lo: candidates_lo.into_iter().fold(f64::INFINITY, f64::min),
            hi: candidates_hi.into_iter().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl Div for IntervalScalar {
    type Output = IntervalScalar;
    /// Panics if `rhs` contains zero; use [`IntervalScalar::checked_div`]
    /// for a fallible version.
    fn div(self, rhs: IntervalScalar) -> IntervalScalar {
        assert!(
            !rhs.contains(0.0),
            "division by interval containing zero: {rhs}"
        );
        let inv = IntervalScalar {
            lo: div_down(1.0, rhs.hi),
            hi: div_up(1.0, rhs.lo),
        };
        self * inv
    }
}

fn div_down(a: f64, b: f64) -> f64 {
    let q = a / b;
    if q.is_finite() && q.abs() > 1e-250 && a.abs() > 1e-250 && q.mul_add(b, -a) == 0.0 {
        return q;
    }
    q.next_down()
}

fn div_up(a: f64, b: f64) -> f64 {
    let q = a / b;
    if q.is_finite() && q.abs() > 1e-250 && a.abs() > 1e-250 && q.mul_add(b, -a) == 0.0 {
        return q;
    }
    q.next_up()
}

impl fmt::Display for IntervalScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Serialized as a pair of decimal strings. Rust's shortest-roundtrip
/// formatting guarantees re-parsing restores the identical endpoints, so a
/// round trip yields a (trivially equal) superset.
impl Serialize for IntervalScalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            lo: &'a str,
            hi: &'a str,
        }
        let lo = format_endpoint(self.lo);
        let hi = format_endpoint(self.hi);
        Repr {
            lo: &lo,
            hi: &hi,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IntervalScalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            lo: String,
            hi: String,
        }
        let r = Repr::deserialize(deserializer)?;
        let lo = parse_endpoint(&r.lo).map_err(D::Error::custom)?;
        let hi = parse_endpoint(&r.hi).map_err(D::Error::custom)?;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(D::Error::custom(format!(
                "invalid interval endpoints [{}, {}]",
                r.lo, r.hi
            )));
        }
        Ok(IntervalScalar { lo, hi })
    }
}

fn format_endpoint(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x}")
    }
}

fn parse_endpoint(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("{e}: {s:?}"))
}

/// Sum of intervals in slice order.
pub fn sum(values: impl IntoIterator<Item = IntervalScalar>) -> IntervalScalar {
    values
        .into_iter()
        .fold(IntervalScalar::ZERO, |acc, v| acc + v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> IntervalScalar {
        IntervalScalar::new(lo, hi)
    }

    #[test]
    fn exact_integer_arithmetic_stays_tight() {
        let x = iv(1.0, 1.0) + iv(2.0, 2.0);
        assert!(x.contains(3.0));
        assert!(x.width() <= 4.0 * f64::EPSILON * 3.0);

        let y = iv(-1.0, 2.0) * iv(3.0, 3.0);
        assert!(y.contains(-3.0) && y.contains(6.0));
        assert!(y.lo >= -3.0 - 1e-14 && y.hi <= 6.0 + 1e-14);
    }

    #[test]
    fn division_by_zero_interval_is_domain_error() {
        let err = iv(1.0, 2.0).checked_div(&iv(0.0, 1.0));
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn exp_log_cbrt_points() {
        let e = IntervalScalar::point(0.0).exp();
        assert!(e.contains(1.0));
        assert!(e.width() <= 4.0 * f64::EPSILON);

        let c = IntervalScalar::point(-8.0).cbrt();
        assert!(c.contains(-2.0));
        assert!(c.width() <= 4.0 * 2.0 * f64::EPSILON);

        assert!(IntervalScalar::new(0.0, 1.0).log().is_err());
        assert!(IntervalScalar::new(-1.0, 1.0)
            .pow_frac(-2, 3)
            .is_err());
    }

    #[test]
    fn three_over_e_to_the_19th() {
        // Exercises the pow-by-squaring path on a value used by the built-in
        // two-branch model: (3/e)^19 = 6.51191... < 7.
        let three = IntervalScalar::point(3.0);
        let e = IntervalScalar::point(1.0).exp();
        let x = (three / e).pow_int(19).unwrap();
        assert!(x.lo > 6.51 && x.hi < 7.0, "got {x}");
    }

    #[test]
    fn decimal_parsing_is_smallest_enclosure() {
        let x = IntervalScalar::from_decimal("0.1").unwrap();
        assert!(x.width() <= 2.0 * f64::EPSILON * 0.1);
        assert!(x.lo < 0.1 + 1e-17 && x.hi > 0.1 - 1e-17);
        // 0.1 is not a binary fraction: the enclosure must be one ulp wide.
        assert!(x.lo < x.hi);

        // 0.5 is exact.
        let y = IntervalScalar::from_decimal("0.5").unwrap();
        assert_eq!(y, IntervalScalar::point(0.5));

        // Long literal beyond f64 precision.
        let z = IntervalScalar::from_decimal(
            "0.02328852830307032054478158044023918735669943648088852646123182739831022528158",
        )
        .unwrap();
        assert!(z.lo < z.hi);
        assert!(z.contains(0.023288528303070322));
    }

    #[test]
    fn pow_int_handles_straddling_and_negative_exponents() {
        let x = iv(-1.0, 2.0);
        let sq = x.pow_int(2).unwrap();
        assert!(sq.lo >= 0.0 && sq.contains(4.0) && sq.contains(0.0));

        let inv = iv(2.0, 4.0).pow_int(-2).unwrap();
        assert!(inv.contains(1.0 / 16.0) && inv.contains(1.0 / 4.0));
    }

    #[test]
    fn fractional_powers_follow_signed_cbrt_semantics() {
        let x = iv(-8.0, -8.0).pow_frac(1, 3).unwrap();
        assert!(x.contains(-2.0));
        let y = iv(8.0, 8.0).pow_frac(-2, 3).unwrap();
        assert!(y.contains(0.25));
        let z = iv(-8.0, -8.0).pow_frac(-2, 3).unwrap();
        assert!(z.contains(0.25));
    }

    #[test]
    fn serde_round_trip_is_identical() {
        let x = iv(-1.0e-17, 0.30000000000000004);
        let s = serde_json::to_string(&x).unwrap();
        let y: IntervalScalar = serde_json::from_str(&s).unwrap();
        assert_eq!(x, y);

        let w = IntervalScalar::new(0.0, f64::INFINITY);
        let s = serde_json::to_string(&w).unwrap();
        let y: IntervalScalar = serde_json::from_str(&s).unwrap();
        assert_eq!(w, y);
    }

    #[test]
    fn exact_arithmetic_fuzz_against_bigint_rationals() {
        // 10^4 pseudo-random point inputs; +, -, * checked against exact
        // rational arithmetic, / checked by re-multiplying.
        use num_bigint::BigInt;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            f64::from_bits((state >> 12) | 0x3ff0000000000000) - 1.5
        };
        let to_rat = |x: f64| -> (BigInt, i64) {
            let bits = x.to_bits();
            let sign = if bits >> 63 == 1 { -1 } else { 1 };
            let e = ((bits >> 52) & 0x7ff) as i64;
            let f = bits & ((1u64 << 52) - 1);
            let (m, e2) = if e == 0 {
                (f, -1074)
            } else {
                (f | (1 << 52), e - 1075)
            };
            (BigInt::from(sign) * BigInt::from(m), e2)
        };
        let contains_exact = |iv: IntervalScalar, m: &BigInt, e2: i64| {
            let (ml, el) = to_rat(iv.lo());
            let (mh, eh) = to_rat(iv.hi());
            let scale = el.min(eh).min(e2);
            let shift = |m: &BigInt, e: i64| m.clone() * BigInt::from(2u8).pow((e - scale) as u32);
            shift(&ml, el) <= shift(m, e2) && shift(m, e2) <= shift(&mh, eh)
        };
        for _ in 0..10_000 {
            let a = next();
            let b = next();
            let (ma, ea) = to_rat(a);
            let (mb, eb) = to_rat(b);
            let ia = IntervalScalar::point(a);
            let ib = IntervalScalar::point(b);

            // a + b
            let e = ea.min(eb);
            let m = &ma * BigInt::from(2u8).pow((ea - e) as u32)
                + &mb * BigInt::from(2u8).pow((eb - e) as u32);
            assert!(contains_exact(ia + ib, &m, e));

            // a * b
            assert!(contains_exact(ia * ib, &(&ma * &mb), ea + eb));

            // a / b via re-multiplication: a in (a/b) * b
            if b != 0.0 && ma != BigInt::from(0) {
                let q = ia / ib;
                let back = q * ib;
                assert!(contains_exact(back, &ma, ea));
            }
        }
    }

    #[test]
    fn elementary_point_results_respect_neighbor_monotonicity() {
        let mut x = 0.017f64;
        for _ in 0..2000 {
            x = (x * 1.0137).rem_euclid(20.0) + 1e-6;
            let ex = IntervalScalar::point(x).exp();
            assert!(ex.contains(x.exp()));
            // exp is increasing: the true value exceeds exp at the previous float.
            assert!(ex.hi() >= x.next_down().exp());
            assert!(ex.lo() <= x.next_up().exp());

            let lx = IntervalScalar::point(x).log().unwrap();
            assert!(lx.contains(x.ln()));

            let cx = IntervalScalar::point(x).cbrt();
            assert!(cx.contains(x.cbrt()));
            // Identity round trip: (cbrt x)^3 must contain x.
            assert!(cx.pow_int(3).unwrap().contains(x));
        }
    }

    #[test]
    fn width_control_for_point_arithmetic() {
        let xs = [0.3, 1.7e-4, 9.1, 123.456, 2.0f64.powi(-30)];
        for &a in &xs {
            for &b in &xs {
                let w = (IntervalScalar::point(a) * IntervalScalar::point(b)).width();
                assert!(w <= 4.0 * (a * b).abs() * f64::EPSILON + f64::MIN_POSITIVE);
                let w = (IntervalScalar::point(a) / IntervalScalar::point(b)).width();
                assert!(w <= 4.0 * (a / b).abs() * f64::EPSILON + f64::MIN_POSITIVE);
            }
        }
    }
}
