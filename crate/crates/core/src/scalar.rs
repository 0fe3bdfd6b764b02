//! Scalar abstractions shared by the chart and tensor code.
//!
//! Two traits live here. [`Scalar`] is the element type of dense tensors and
//! is implemented for `f32` and `f64`. [`ChartScalar`] is the minimal
//! log-semiring interface the dynamic programs need; besides the two float
//! types it is implemented for [`Dual`], which lets the inside/outside passes
//! run in forward mode and produce Hessian-vector products of the log
//! partition function.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, NumAssign, One, ToPrimitive, Zero};

/// Element type of [`crate::tensor::Tensor`].
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite conversion")
    }

    fn count(x: usize) -> Self {
        Self::lit(x as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic needed by the log-space chart algorithms.
pub trait ChartScalar:
    Copy
    + Debug
    + Send
    + Sync
    + Zero
    + One
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    fn neg_infinity() -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// Real part used for comparisons and pruning decisions.
    fn re(self) -> f64;
    fn from_re(x: f64) -> Self;

    fn is_neg_infinite(self) -> bool {
        self.re() == f64::NEG_INFINITY
    }
}

macro_rules! chart_scalar_float {
    ($($t:ty)*) => ($(
        impl ChartScalar for $t {
            fn neg_infinity() -> Self { <$t>::NEG_INFINITY }
            fn exp(self) -> Self { <$t>::exp(self) }
            fn ln(self) -> Self { <$t>::ln(self) }
            fn re(self) -> f64 { self as f64 }
            fn from_re(x: f64) -> Self { x as $t }
        }
    )*)
}

chart_scalar_float!(f32 f64);

/// Numerically guarded `log(sum(exp(xs)))`. Returns −∞ for an empty or
/// all-−∞ input.
pub fn logsumexp<S: ChartScalar>(xs: &[S]) -> S {
    let mut max = S::neg_infinity();
    for &x in xs {
        if x.re() > max.re() {
            max = x;
        }
    }
    if max.is_neg_infinite() {
        return S::neg_infinity();
    }
    let mut acc = S::zero();
    for &x in xs {
        if !x.is_neg_infinite() {
            acc += (x - max).exp();
        }
    }
    max + acc.ln()
}

/// First-order dual number `re + du·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }

    pub fn constant(re: f64) -> Self {
        Dual { re, du: 0.0 }
    }
}

impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl Display for Dual {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}ε", self.re, self.du)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        // 0·∞ terms arise only from −∞ log scores whose tangent is zero.
        let a = if o.du == 0.0 { 0.0 } else { self.re * o.du };
        let b = if self.du == 0.0 { 0.0 } else { self.du * o.re };
        Dual::new(self.re * o.re, a + b)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.re / o.re,
            (self.du * o.re - self.re * o.du) / (o.re * o.re),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}

impl Zero for Dual {
    fn zero() -> Self {
        Dual::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.du == 0.0
    }
}

impl One for Dual {
    fn one() -> Self {
        Dual::constant(1.0)
    }
}

impl ChartScalar for Dual {
    fn neg_infinity() -> Self {
        Dual::constant(f64::NEG_INFINITY)
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        let du = if self.du == 0.0 { 0.0 } else { self.du * e };
        Dual::new(e, du)
    }

    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }

    fn re(self) -> f64 {
        self.re
    }

    fn from_re(x: f64) -> Self {
        Dual::constant(x)
    }
}
