//! Floating-point abstraction the numeric core is generic over, plus a
//! dual-number type used to differentiate the spline kernel exactly.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, NumAssign};

/// Scalar type for all numeric state: `f32` or `f64`.
pub trait Scalar: Float + NumAssign + Sum + Debug + Display + Send + Sync + 'static {
    /// Gauss error function (exact GELU needs it).
    fn erf(self) -> Self;

    fn of_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 conversion")
    }

    fn of_usize(v: usize) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("usize conversion")
    }

    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("f64 conversion")
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

/// Forward-mode dual number: value plus one directional derivative.
///
/// Arithmetic follows the usual chain rules, so any computation expressed
/// through [`SplineNum`] yields machine-precision derivatives, not
/// finite-difference approximations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<F> {
    pub v: F,
    pub d: F,
}

impl<F: Scalar> Dual<F> {
    pub fn constant(v: F) -> Self {
        Dual { v, d: F::zero() }
    }

    /// Seed the derivative slot: d(self)/d(seeded input) = 1.
    pub fn seeded(v: F) -> Self {
        Dual { v, d: F::one() }
    }
}

impl<F: Scalar> Add for Dual<F> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl<F: Scalar> Sub for Dual<F> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl<F: Scalar> Mul for Dual<F> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl<F: Scalar> Div for Dual<F> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl<F: Scalar> Neg for Dual<F> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { v: -self.v, d: -self.d }
    }
}

/// Number type the rational-quadratic spline kernel is written against.
///
/// Instantiated with a plain scalar for evaluation and with [`Dual`] for
/// exact partial derivatives. Branching (bin search, tail test) always
/// compares primal values, which is what almost-everywhere
/// differentiability of the piecewise map requires.
pub trait SplineNum<F: Scalar>:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_real(v: F) -> Self;
    fn real(self) -> F;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl<F: Scalar> SplineNum<F> for F {
    fn from_real(v: F) -> Self {
        v
    }
    fn real(self) -> F {
        self
    }
    fn exp(self) -> Self {
        Float::exp(self)
    }
    fn ln(self) -> Self {
        Float::ln(self)
    }
}

impl<F: Scalar> SplineNum<F> for Dual<F> {
    fn from_real(v: F) -> Self {
        Dual::constant(v)
    }
    fn real(self) -> F {
        self.v
    }
    fn exp(self) -> Self {
        let e = Float::exp(self.v);
        Dual { v: e, d: self.d * e }
    }
    fn ln(self) -> Self {
        Dual { v: Float::ln(self.v), d: self.d / self.v }
    }
}

/// Numerically stable softplus, generic over the spline number type.
pub fn softplus_stable<F: Scalar, S: SplineNum<F>>(x: S) -> S {
    // softplus(x) = max(x, 0) + ln(1 + exp(-|x|))
    let one = S::from_real(F::one());
    if x.real() > F::zero() {
        x + (one + (-x).exp()).ln()
    } else {
        (one + x.exp()).ln()
    }
}
