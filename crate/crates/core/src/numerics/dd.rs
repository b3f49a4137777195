//! Double-double arithmetic (about 106 significant bits) and the scalar
//! trait shared with `f64`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tensor::sigmoid as sigmoid_f64;

/// Real arithmetic needed by the loop-level reference network.
pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn tanh(self) -> Self {
        let two = Self::from_f64(2.0);
        Self::one() - two / ((two * self).exp() + Self::one())
    }

    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(v: f64) -> Self {
        DoubleDouble { hi: v, lo: 0.0 }
    }

    fn from_pair((hi, lo): (f64, f64)) -> Self {
        DoubleDouble { hi, lo }
    }

    /// Multiplication by a power of two, exact away from under/overflow.
    fn ldexp(self, k: i32) -> Self {
        let half = k / 2;
        let a = 2f64.powi(half);
        let b = 2f64.powi(k - half);
        DoubleDouble {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::from_pair(fast_two_sum(p, e + self.lo * b))
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, y: Self) -> Self {
        let (s, e) = two_sum(self.hi, y.hi);
        if !s.is_finite() {
            return DoubleDouble::new(s);
        }
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = fast_two_sum(s, e + t);
        Self::from_pair(fast_two_sum(s, e + f))
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, y: Self) -> Self {
        self + (-y)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, y: Self) -> Self {
        let (p, e) = two_prod(self.hi, y.hi);
        if !p.is_finite() {
            return DoubleDouble::new(p);
        }
        let e = e + (self.hi * y.lo + self.lo * y.hi);
        Self::from_pair(fast_two_sum(p, e))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, y: Self) -> Self {
        let q1 = self.hi / y.hi;
        if !q1.is_finite() || !y.is_finite() {
            return DoubleDouble::new(q1);
        }
        let r = self - y.mul_f64(q1);
        let q2 = r.hi / y.hi;
        let r = r - y.mul_f64(q2);
        let q3 = r.hi / y.hi;
        Self::from_pair(fast_two_sum(q1, q2)) + DoubleDouble::new(q3)
    }
}

impl Scalar for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        DoubleDouble::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DoubleDouble::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DoubleDouble::new(0.0);
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-SQUARINGS);
        // expm1(r) by Taylor series; |r| < 4e-4 so 10 terms reach 1e-34.
        let mut term = r;
        let mut sum = r;
        for n in 2..=10 {
            term = term * r / DoubleDouble::new(n as f64);
            sum = sum + term;
        }
        // expm1(2x) = expm1(x) * (expm1(x) + 2)
        for _ in 0..SQUARINGS {
            sum = sum * (sum + DoubleDouble::new(2.0));
        }
        (sum + DoubleDouble::new(1.0)).ldexp(k as i32)
    }

    fn ln(self) -> Self {
        if !(self.hi > 0.0) || !self.is_finite() {
            return DoubleDouble::new(self.hi.ln());
        }
        let mut y = DoubleDouble::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - DoubleDouble::new(1.0);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = DoubleDouble;

    fn close(a: D, b: D, tol: f64) -> bool {
        let d = a - b;
        (d.hi + d.lo).abs() <= tol * b.hi.abs().max(1e-300)
    }

    #[test]
    fn division_recovers_the_dividend() {
        let third = D::new(1.0) / D::new(3.0);
        let back = third * D::new(3.0);
        assert!(close(back, D::new(1.0), 1e-31));
        assert!(third.lo != 0.0);
        let x = D::new(0.7) / D::new(1.3);
        assert!(close(x * D::new(1.3), D::new(0.7), 1e-31));
    }

    #[test]
    fn exp_of_one_matches_known_digits() {
        let e = D::new(1.0).exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-31);
    }

    #[test]
    fn ln_inverts_exp() {
        for v in [-20.0, -3.3, -0.01, 1e-9, 0.5, 2.0, 17.25, 300.0] {
            let x = D::new(v);
            let back = x.exp().ln() - x;
            assert!((back.hi + back.lo).abs() < 1e-30 * v.abs().max(1.0), "{v}");
        }
        assert!(close(D::new(2.0).ln(), LN2, 1e-31));
    }

    #[test]
    fn agrees_with_f64_to_rounding() {
        for i in -40..40 {
            let v = i as f64 * 0.37 + 0.011;
            let d = D::new(v);
            assert!((d.exp().to_f64() - v.exp()).abs() <= 4.0 * f64::EPSILON * v.exp());
            assert!((Scalar::tanh(d).to_f64() - v.tanh()).abs() <= 4.0 * f64::EPSILON);
            assert!((Scalar::sigmoid(d).to_f64() - sigmoid_f64(v)).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn extreme_arguments_saturate() {
        assert_eq!(Scalar::sigmoid(D::new(-800.0)).to_f64(), 0.0);
        assert_eq!(Scalar::sigmoid(D::new(800.0)).to_f64(), 1.0);
        assert_eq!(Scalar::tanh(D::new(-400.0)).to_f64(), -1.0);
        assert_eq!(Scalar::tanh(D::new(400.0)).to_f64(), 1.0);
    }
}
