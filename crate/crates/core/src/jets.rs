//! Truncated multivariate Taylor expansions ("jets") through third order.
//!
//! A [`Jet`] carries the value of a scalar function at a point together with
//! all of its partial derivatives up to its stored order (0 to 3). Arithmetic
//! is exact truncated-Taylor arithmetic: products use the Leibniz rule and
//! univariate composition uses Faà di Bruno's formula. Binary operations
//! truncate to the smaller operand order, so derivative data that was never
//! computed can not leak into a result.
//!
//! Partials are stored densely (`n`, `n*n`, `n*n*n` entries). Symmetric
//! entries are always written together from a single computed value, which
//! keeps the Hessian and third-derivative arrays exactly symmetric.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: u8 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("coordinate index {index} out of range for {n} variables")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("jet order {0} exceeds the supported maximum of 3")]
    OrderTooHigh(u8),
    #[error("jet dimension mismatch: {left} vs {right} variables")]
    DimensionMismatch { left: usize, right: usize },
    #[error("division by a jet with zero value")]
    DivisionByZero,
    #[error("requested derivative order {requested} but the jet only carries order {available}")]
    InsufficientOrder { requested: u8, available: u8 },
}

/// Value and partial derivatives (through `order`) of a scalar at a point.
#[derive(Clone, PartialEq)]
pub struct Jet {
    n: usize,
    order: u8,
    value: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Jet");
        s.field("order", &self.order).field("value", &self.value);
        if self.order >= 1 {
            s.field("grad", &self.d1);
        }
        if self.order >= 2 {
            s.field("hess", &self.d2);
        }
        if self.order >= 3 {
            s.field("third", &self.d3);
        }
        s.finish()
    }
}

/// Calls `f(i, j, k)` once for each sorted triple `i <= j <= k < n`.
#[inline]
fn for_sorted_triples(n: usize, mut f: impl FnMut(usize, usize, usize)) {
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                f(i, j, k);
            }
        }
    }
}

impl Jet {
    fn alloc(n: usize, order: u8) -> Self {
        let o = order.min(MAX_ORDER);
        Jet {
            n,
            order: o,
            value: 0.0,
            d1: if o >= 1 { vec![0.0; n] } else { Vec::new() },
            d2: if o >= 2 { vec![0.0; n * n] } else { Vec::new() },
            d3: if o >= 3 { vec![0.0; n * n * n] } else { Vec::new() },
        }
    }

    /// A constant function: all partials zero.
    pub fn constant(n: usize, order: u8, value: f64) -> Self {
        let mut j = Jet::alloc(n, order);
        j.value = value;
        j
    }

    /// The coordinate function `x^index` expanded at `point`.
    pub fn seed(index: usize, point: &[f64], order: u8) -> Result<Self, JetError> {
        let n = point.len();
        if index >= n {
            return Err(JetError::IndexOutOfRange { index, n });
        }
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        let mut j = Jet::constant(n, order, point[index]);
        if order >= 1 {
            j.d1[index] = 1.0;
        }
        Ok(j)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// First partial `∂_i`; zero when the jet carries no first-order data.
    pub fn d1(&self, i: usize) -> f64 {
        if self.order >= 1 {
            self.d1[i]
        } else {
            0.0
        }
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        if self.order >= 2 {
            self.d2[i * self.n + j]
        } else {
            0.0
        }
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.order >= 3 {
            self.d3[(i * self.n + j) * self.n + k]
        } else {
            0.0
        }
    }

    pub fn grad(&self) -> &[f64] {
        &self.d1
    }

    pub fn hess(&self) -> &[f64] {
        &self.d2
    }

    pub fn third(&self) -> &[f64] {
        &self.d3
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d1.iter().all(|v| v.is_finite())
            && self.d2.iter().all(|v| v.is_finite())
            && self.d3.iter().all(|v| v.is_finite())
    }

    /// Drops derivative data above `order`.
    pub fn truncate(&self, order: u8) -> Jet {
        if order >= self.order {
            return self.clone();
        }
        let mut out = Jet::alloc(self.n, order);
        out.value = self.value;
        if order >= 1 {
            out.d1.copy_from_slice(&self.d1);
        }
        if order >= 2 {
            out.d2.copy_from_slice(&self.d2);
        }
        out
    }

    /// The jet of `∂_i f`, one order lower.
    pub fn partial(&self, i: usize) -> Result<Jet, JetError> {
        if self.order == 0 {
            return Err(JetError::InsufficientOrder {
                requested: 1,
                available: 0,
            });
        }
        if i >= self.n {
            return Err(JetError::IndexOutOfRange {
                index: i,
                n: self.n,
            });
        }
        let n = self.n;
        let mut out = Jet::alloc(n, self.order - 1);
        out.value = self.d1[i];
        if out.order >= 1 {
            out.d1.copy_from_slice(&self.d2[i * n..(i + 1) * n]);
        }
        if out.order >= 2 {
            out.d2.copy_from_slice(&self.d3[i * n * n..(i + 1) * n * n]);
        }
        Ok(out)
    }

    fn check_dims(&self, other: &Jet) -> Result<(), JetError> {
        if self.n != other.n {
            Err(JetError::DimensionMismatch {
                left: self.n,
                right: other.n,
            })
        } else {
            Ok(())
        }
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Result<Jet, JetError> {
        self.check_dims(other)?;
        let order = self.order.min(other.order);
        let mut out = Jet::alloc(self.n, order);
        out.value = f(self.value, other.value);
        for (o, (a, b)) in out.d1.iter_mut().zip(self.d1.iter().zip(&other.d1)) {
            *o = f(*a, *b);
        }
        for (o, (a, b)) in out.d2.iter_mut().zip(self.d2.iter().zip(&other.d2)) {
            *o = f(*a, *b);
        }
        for (o, (a, b)) in out.d3.iter_mut().zip(self.d3.iter().zip(&other.d3)) {
            *o = f(*a, *b);
        }
        Ok(out)
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.zip(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet, JetError> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.value *= s;
        out.d1.iter_mut().for_each(|v| *v *= s);
        out.d2.iter_mut().for_each(|v| *v *= s);
        out.d3.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.value += s;
        out
    }

    /// Leibniz-rule product.
    pub fn try_mul(&self, b: &Jet) -> Result<Jet, JetError> {
        self.check_dims(b)?;
        let a = self;
        let n = a.n;
        let order = a.order.min(b.order);
        let mut out = Jet::alloc(n, order);
        let (a0, b0) = (a.value, b.value);
        out.value = a0 * b0;
        if order >= 1 {
            for i in 0..n {
                out.d1[i] = a.d1[i] * b0 + a0 * b.d1[i];
            }
        }
        if order >= 2 {
            for i in 0..n {
                for j in i..n {
                    let v = a.d2[i * n + j] * b0
                        + a.d1[i] * b.d1[j]
                        + a.d1[j] * b.d1[i]
                        + a0 * b.d2[i * n + j];
                    out.d2[i * n + j] = v;
                    out.d2[j * n + i] = v;
                }
            }
        }
        if order >= 3 {
            let (a1, a2, a3) = (&a.d1, &a.d2, &a.d3);
            let (b1, b2, b3) = (&b.d1, &b.d2, &b.d3);
            for_sorted_triples(n, |i, j, k| {
                let ijk = (i * n + j) * n + k;
                let v = a3[ijk] * b0
                    + a2[i * n + j] * b1[k]
                    + a2[i * n + k] * b1[j]
                    + a2[j * n + k] * b1[i]
                    + a1[i] * b2[j * n + k]
                    + a1[j] * b2[i * n + k]
                    + a1[k] * b2[i * n + j]
                    + a0 * b3[ijk];
                out.set3(i, j, k, v);
            });
        }
        Ok(out)
    }

    fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        for (x, y, z) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.d3[(x * n + y) * n + z] = v;
        }
    }

    /// `f(self)` for a univariate `f` given its value and first three
    /// derivatives at `self.value()` (Faà di Bruno through third order).
    pub fn compose(&self, f: [f64; 4]) -> Jet {
        let u = self;
        let n = u.n;
        let mut out = Jet::alloc(n, u.order);
        out.value = f[0];
        if u.order >= 1 {
            for i in 0..n {
                out.d1[i] = f[1] * u.d1[i];
            }
        }
        if u.order >= 2 {
            for i in 0..n {
                for j in i..n {
                    let v = f[1] * u.d2[i * n + j] + f[2] * u.d1[i] * u.d1[j];
                    out.d2[i * n + j] = v;
                    out.d2[j * n + i] = v;
                }
            }
        }
        if u.order >= 3 {
            let (u1, u2, u3) = (&u.d1, &u.d2, &u.d3);
            for_sorted_triples(n, |i, j, k| {
                let v = f[1] * u3[(i * n + j) * n + k]
                    + f[2]
                        * (u2[i * n + j] * u1[k] + u2[i * n + k] * u1[j] + u2[j * n + k] * u1[i])
                    + f[3] * u1[i] * u1[j] * u1[k];
                out.set3(i, j, k, v);
            });
        }
        out
    }

    pub fn try_recip(&self) -> Result<Jet, JetError> {
        let x = self.value;
        if x == 0.0 {
            return Err(JetError::DivisionByZero);
        }
        let r = 1.0 / x;
        Ok(self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r]))
    }

    pub fn try_div(&self, other: &Jet) -> Result<Jet, JetError> {
        self.try_mul(&other.try_recip()?)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.compose([c, -s, -c, s])
    }

    /// Caller checks `cos(value) != 0`.
    pub fn tan(&self) -> Jet {
        let t = self.value.tan();
        let sec2 = 1.0 + t * t;
        self.compose([t, sec2, 2.0 * t * sec2, 2.0 * sec2 * (1.0 + 3.0 * t * t)])
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.compose([e, e, e, e])
    }

    /// Caller checks `value > 0`.
    pub fn ln(&self) -> Jet {
        let x = self.value;
        let r = 1.0 / x;
        self.compose([x.ln(), r, -r * r, 2.0 * r * r * r])
    }

    /// Caller checks `value > 0` (or `>= 0` for order-0 jets).
    pub fn sqrt(&self) -> Jet {
        let x = self.value;
        let s = x.sqrt();
        if self.order == 0 {
            return Jet::constant(self.n, 0, s);
        }
        let r = 1.0 / x;
        self.compose([s, 0.5 * s * r, -0.25 * s * r * r, 0.375 * s * r * r * r])
    }

    /// Integer power. Negative exponents require a nonzero value.
    pub fn powi(&self, k: i32) -> Result<Jet, JetError> {
        let x = self.value;
        if k < 0 && x == 0.0 {
            return Err(JetError::DivisionByZero);
        }
        // d^m/dx^m x^k = k(k-1)...(k-m+1) x^(k-m); the coefficient is zero
        // before the power can blow up at x = 0.
        let deriv = |m: i32| -> f64 {
            let coeff: f64 = (0..m).map(|i| f64::from(k - i)).product();
            if coeff == 0.0 {
                0.0
            } else {
                coeff * x.powi(k - m)
            }
        };
        Ok(self.compose([deriv(0), deriv(1), deriv(2), deriv(3)]))
    }

    pub fn max_abs_partial(&self) -> f64 {
        self.d1
            .iter()
            .chain(&self.d2)
            .chain(&self.d3)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl $tr<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                self.$call(rhs).expect("jet operands must share the number of variables")
            }
        }
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                (&self).$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, try_add);
forward_binop!(Sub, sub, try_sub);
forward_binop!(Mul, mul, try_mul);

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seed_examples() {
        let j = Jet::seed(1, &[0.0, 2.0, 0.0], 3).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.grad(), &[0.0, 1.0, 0.0]);
        assert!(j.hess().iter().all(|v| *v == 0.0));
        assert!(j.third().iter().all(|v| *v == 0.0));

        let j0 = Jet::seed(0, &[5.0], 0).unwrap();
        assert_eq!(j0.value(), 5.0);
        assert!(j0.grad().is_empty());

        assert_eq!(
            Jet::seed(3, &[1.0, 2.0, 3.0], 2),
            Err(JetError::IndexOutOfRange { index: 3, n: 3 })
        );
        assert_eq!(Jet::seed(0, &[1.0], 4), Err(JetError::OrderTooHigh(4)));
    }

    #[test]
    fn square_of_seed() {
        let x = Jet::seed(0, &[3.0], 3).unwrap();
        let sq = &x * &x;
        assert_eq!(sq.value(), 9.0);
        assert_eq!(sq.d1(0), 6.0);
        assert_eq!(sq.d2(0, 0), 2.0);
        assert_eq!(sq.d3(0, 0, 0), 0.0);
    }

    #[test]
    fn recip_geometric_series() {
        let x = Jet::seed(0, &[0.0], 3).unwrap();
        let r = x.add_scalar(1.0).try_recip().unwrap();
        assert_eq!(r.value(), 1.0);
        assert_eq!(r.d1(0), -1.0);
        assert_eq!(r.d2(0, 0), 2.0);
        assert_eq!(r.d3(0, 0, 0), -6.0);
    }

    #[test]
    fn recip_of_zero_fails() {
        let z = Jet::constant(2, 3, 0.0);
        assert_eq!(z.try_recip(), Err(JetError::DivisionByZero));
    }

    #[test]
    fn sin_of_square_against_finite_differences() {
        let f = |x: f64| (x * x).sin();
        let h = 1e-4;
        let x0 = 1.0;
        let fd1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        let fd2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);

        let x = Jet::seed(0, &[x0], 3).unwrap();
        let j = (&x * &x).sin();
        assert_relative_eq!(j.value(), 1f64.sin(), max_relative = 1e-15);
        assert_relative_eq!(j.d1(0), fd1, max_relative = 1e-7);
        assert_relative_eq!(j.d2(0, 0), fd2, max_relative = 1e-6);
        assert_relative_eq!(j.d1(0), 2.0 * 1f64.cos(), max_relative = 1e-14);
        assert_relative_eq!(
            j.d2(0, 0),
            2.0 * 1f64.cos() - 4.0 * 1f64.sin(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn order_truncates_to_minimum() {
        let a = Jet::seed(0, &[1.0, 2.0], 3).unwrap();
        let b = Jet::seed(1, &[1.0, 2.0], 1).unwrap();
        assert_eq!((&a * &b).order(), 1);
        assert_eq!((&a + &b).order(), 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Jet::constant(2, 1, 1.0);
        let b = Jet::constant(3, 1, 1.0);
        assert!(matches!(
            a.try_mul(&b),
            Err(JetError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn partial_lowers_order() {
        let p = [0.5, 1.5];
        let x = Jet::seed(0, &p, 3).unwrap();
        let y = Jet::seed(1, &p, 3).unwrap();
        let f = &(&x * &x) * &y; // x^2 y
        let fx = f.partial(0).unwrap(); // 2xy
        assert_eq!(fx.order(), 2);
        assert_relative_eq!(fx.value(), 2.0 * 0.5 * 1.5);
        assert_relative_eq!(fx.d1(1), 1.0);
        assert_relative_eq!(fx.d2(0, 1), 2.0);
        assert!(Jet::constant(2, 0, 1.0).partial(0).is_err());
    }

    #[test]
    fn powi_at_zero_base() {
        let x = Jet::seed(0, &[0.0], 3).unwrap();
        let c = x.powi(2).unwrap();
        assert_eq!(c.value(), 0.0);
        assert_eq!(c.d2(0, 0), 2.0);
        assert_eq!(c.d3(0, 0, 0), 0.0);
        assert!(x.powi(-1).is_err());
    }
}
