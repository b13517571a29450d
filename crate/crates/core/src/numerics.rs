//! Exact rational scalars and power-of-r bookkeeping.
//!
//! Every market quantity (utility, price, MBB ratio, bundle value) lives in
//! [`Rat`]. Nothing in the solver path touches floating point; floats only
//! appear in human-facing reports.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericsError {
    #[error("argument must be positive")]
    NonPositive,
    #[error("power base must be a rational greater than 1")]
    BadBase,
    #[error("malformed rational literal `{0}`")]
    BadLiteral(String),
}

/// Exact rational scalar, always in lowest terms with positive denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rat(BigRational);

impl Rat {
    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn from_int(v: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn from_bigint(v: BigInt) -> Self {
        Rat(BigRational::from_integer(v))
    }

    /// `num/den`; reduced on construction. Panics on zero denominator.
    pub fn new(num: BigInt, den: BigInt) -> Self {
        Rat(BigRational::new(num, den))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Parses `"p"`, `"-p"` or `"p/q"` with arbitrary-precision integers.
    pub fn parse(s: &str) -> Result<Self, NumericsError> {
        let bad = || NumericsError::BadLiteral(s.to_string());
        let mut parts = s.splitn(2, '/');
        let num_s = parts.next().ok_or_else(bad)?.trim();
        let num: BigInt = num_s.parse().map_err(|_| bad())?;
        match parts.next() {
            None => Ok(Rat(BigRational::from_integer(num))),
            Some(den_s) => {
                let den: BigInt = den_s.trim().parse().map_err(|_| bad())?;
                if den.is_zero() {
                    return Err(bad());
                }
                Ok(Rat(BigRational::new(num, den)))
            }
        }
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

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn recip(&self) -> Rat {
        Rat(self.0.recip())
    }

    /// Exact integer power, binary exponentiation; negative exponents allowed.
    pub fn pow(&self, exp: i64) -> Rat {
        if exp == 0 {
            return Rat::one();
        }
        let mut base = if exp < 0 { self.0.recip() } else { self.0.clone() };
        let mut e = exp.unsigned_abs();
        let mut acc = BigRational::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Rat(acc)
    }

    pub fn min(self, other: Rat) -> Rat {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Rat) -> Rat {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Nearest f64; display only, never fed back into the solver.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for &Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((&self.0).$method(&rhs.0))
            }
        }
        impl $trait for Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat(self.0.$method(rhs.0))
            }
        }
        impl $trait<&Rat> for Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat(self.0.$method(&rhs.0))
            }
        }
        impl $trait<Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for &Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-&self.0)
    }
}

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

/// `r^t` carried as the integer exponent `t` for the run's fixed `r = 1 + ε`.
///
/// Multiplying or dividing two powers is exponent addition or subtraction;
/// the exact value is recovered on demand with [`PowerOfR::value`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PowerOfR {
    pub exponent: i64,
}

impl PowerOfR {
    pub fn new(exponent: i64) -> Self {
        PowerOfR { exponent }
    }

    pub fn value(&self, r: &Rat) -> Rat {
        r.pow(self.exponent)
    }
}

/// Smallest integer `t` with `r^t >= u` (when `strict` is false) or
/// `r^t > u` (when `strict` is true). Exponential bracketing, then bisection;
/// comparisons are exact.
fn smallest_exponent(u: &Rat, r: &Rat, strict: bool) -> i64 {
    let satisfied = |t: i64| -> bool {
        let v = r.pow(t);
        match v.cmp(u) {
            Ordering::Greater => true,
            Ordering::Equal => !strict,
            Ordering::Less => false,
        }
    };
    // Invariant after bracketing: !satisfied(lo) && satisfied(hi).
    let (mut lo, mut hi);
    if satisfied(0) {
        hi = 0;
        lo = -1;
        while satisfied(lo) {
            hi = lo;
            lo *= 2;
        }
    } else {
        lo = 0;
        hi = 1;
        while !satisfied(hi) {
            lo = hi;
            hi *= 2;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if satisfied(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn check_base(r: &Rat) -> Result<(), NumericsError> {
    if *r <= Rat::one() {
        return Err(NumericsError::BadBase);
    }
    Ok(())
}

/// Smallest power of `r` that is `>= u`, i.e. the "next larger power" used to
/// round utilities and caps. Values that already are powers of `r` map to
/// themselves, so `u <= r^t < r*u` always holds.
pub fn next_power_up(u: &Rat, r: &Rat) -> Result<PowerOfR, NumericsError> {
    check_base(r)?;
    if !u.is_positive() {
        return Err(NumericsError::NonPositive);
    }
    Ok(PowerOfR::new(smallest_exponent(u, r, false)))
}

/// The integer `s` with `r^(s-1) <= q < r^s`.
pub fn floor_log_ratio(q: &Rat, r: &Rat) -> Result<i64, NumericsError> {
    check_base(r)?;
    if !q.is_positive() {
        return Err(NumericsError::NonPositive);
    }
    Ok(smallest_exponent(q, r, true))
}

/// Exact check whether `x` is an integer power of `r`; returns the exponent.
///
/// A float estimate proposes the exponent and one exact power comparison
/// confirms it; the exponent search only runs when the estimate is unusable
/// (overflowed or off by more than one step).
pub fn power_of_r_exponent(x: &Rat, r: &Rat) -> Option<i64> {
    if !x.is_positive() {
        return None;
    }
    let estimate = x.to_f64().ln() / r.to_f64().ln();
    if estimate.is_finite() {
        let t = estimate.round() as i64;
        for cand in [t, t - 1, t + 1] {
            if r.pow(cand) == *x {
                return Some(cand);
            }
        }
        // the estimate was in range but x sits strictly between powers
        if estimate.abs() < 1e9 && (estimate - estimate.round()).abs() > 1e-3 {
            return None;
        }
    }
    let t = smallest_exponent(x, r, false);
    if r.pow(t) == *x {
        Some(t)
    } else {
        None
    }
}
