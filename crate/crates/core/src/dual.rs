//! Forward-mode dual numbers with a dense tangent vector.
//!
//! Problem coefficients are written once against [`Dual`] and evaluated
//! either with constants (empty tangent, no allocation) or with seeded
//! variables to obtain local Jacobians for the reverse-mode tape.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dual {
    pub value: f64,
    /// Partial derivatives w.r.t. the seeded variables; empty for constants.
    pub grad: Vec<f64>,
}

impl Dual {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: Vec::new(),
        }
    }

    /// The `index`-th of `n` independent variables.
    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[index] = 1.0;
        Self { value, grad }
    }

    pub fn constants(values: &[f64]) -> Vec<Dual> {
        values.iter().map(|&v| Dual::constant(v)).collect()
    }

    /// Seeds `values` as variables `offset..offset + values.len()` out of `n`.
    pub fn variables(values: &[f64], offset: usize, n: usize) -> Vec<Dual> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::variable(v, offset + i, n))
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.grad.is_empty()
    }

    /// `d self / d var_i`, zero for constants.
    pub fn partial(&self, i: usize) -> f64 {
        self.grad.get(i).copied().unwrap_or(0.0)
    }

    /// Chain rule for a scalar function with value `v` and derivative `dv`.
    fn chain(&self, v: f64, dv: f64) -> Dual {
        Dual {
            value: v,
            grad: self.grad.iter().map(|g| g * dv).collect(),
        }
    }

    pub fn sin(&self) -> Dual {
        self.chain(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> Dual {
        self.chain(self.value.cos(), -self.value.sin())
    }

    pub fn exp(&self) -> Dual {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn ln(&self) -> Dual {
        self.chain(self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(&self) -> Dual {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn tanh(&self) -> Dual {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }

    pub fn powi(&self, n: i32) -> Dual {
        let dv = if n == 0 { 0.0 } else { n as f64 * self.value.powi(n - 1) };
        self.chain(self.value.powi(n), dv)
    }

    pub fn recip(&self) -> Dual {
        let r = 1.0 / self.value;
        self.chain(r, -r * r)
    }

    pub fn scale(&self, c: f64) -> Dual {
        self.chain(self.value * c, c)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }

    /// `sum_i xs[i]`.
    pub fn sum(xs: &[Dual]) -> Dual {
        let mut acc = Dual::constant(0.0);
        for x in xs {
            acc += x;
        }
        acc
    }

    /// `sum_i a[i] * b[i]`.
    pub fn dot(a: &[Dual], b: &[Dual]) -> Dual {
        let mut acc = Dual::constant(0.0);
        for (x, y) in a.iter().zip(b) {
            acc += &(x * y);
        }
        acc
    }
}

/// `a * x + b * y` on tangents of possibly different emptiness.
fn combine(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    match (x.is_empty(), y.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => x.iter().map(|v| a * v).collect(),
        (true, false) => y.iter().map(|v| b * v).collect(),
        (false, false) => {
            debug_assert_eq!(x.len(), y.len(), "tangent length mismatch");
            x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
        }
    }
}

impl From<f64> for Dual {
    fn from(v: f64) -> Self {
        Dual::constant(v)
    }
}

impl Add<&Dual> for &Dual {
    type Output = Dual;
    fn add(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value + rhs.value,
            grad: combine(1.0, &self.grad, 1.0, &rhs.grad),
        }
    }
}

impl Sub<&Dual> for &Dual {
    type Output = Dual;
    fn sub(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value - rhs.value,
            grad: combine(1.0, &self.grad, -1.0, &rhs.grad),
        }
    }
}

impl Mul<&Dual> for &Dual {
    type Output = Dual;
    fn mul(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value * rhs.value,
            grad: combine(rhs.value, &self.grad, self.value, &rhs.grad),
        }
    }
}

impl Div<&Dual> for &Dual {
    type Output = Dual;
    fn div(self, rhs: &Dual) -> Dual {
        let inv = 1.0 / rhs.value;
        let q = self.value * inv;
        Dual {
            value: q,
            grad: combine(inv, &self.grad, -q * inv, &rhs.grad),
        }
    }
}

impl Neg for &Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.scale(-1.0)
    }
}

impl AddAssign<&Dual> for Dual {
    fn add_assign(&mut self, rhs: &Dual) {
        self.value += rhs.value;
        if rhs.grad.is_empty() {
            return;
        }
        if self.grad.is_empty() {
            self.grad = rhs.grad.clone();
        } else {
            for (a, b) in self.grad.iter_mut().zip(&rhs.grad) {
                *a += b;
            }
        }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Dual> for Dual {
            type Output = Dual;
            fn $m(self, rhs: Dual) -> Dual {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Dual> for Dual {
            type Output = Dual;
            fn $m(self, rhs: &Dual) -> Dual {
                (&self).$m(rhs)
            }
        }
        impl $tr<Dual> for &Dual {
            type Output = Dual;
            fn $m(self, rhs: Dual) -> Dual {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);
forward_owned!(Div, div);

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        (&self).neg()
    }
}

impl Add<f64> for &Dual {
    type Output = Dual;
    fn add(self, rhs: f64) -> Dual {
        Dual {
            value: self.value + rhs,
            grad: self.grad.clone(),
        }
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for &Dual {
    type Output = Dual;
    fn sub(self, rhs: f64) -> Dual {
        self + (-rhs)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(self, rhs: f64) -> Dual {
        self + (-rhs)
    }
}

impl Mul<f64> for &Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        self.scale(rhs)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(mut self, rhs: f64) -> Dual {
        self.value *= rhs;
        for g in &mut self.grad {
            *g *= rhs;
        }
        self
    }
}

impl Div<f64> for &Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        self.scale(1.0 / rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        self * (1.0 / rhs)
    }
}

impl Mul<&Dual> for f64 {
    type Output = Dual;
    fn mul(self, rhs: &Dual) -> Dual {
        rhs.scale(self)
    }
}

impl Mul<Dual> for f64 {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        rhs * self
    }
}

impl Sub<&Dual> for f64 {
    type Output = Dual;
    fn sub(self, rhs: &Dual) -> Dual {
        rhs.scale(-1.0) + self
    }
}

impl Sub<Dual> for f64 {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        rhs * -1.0 + self
    }
}

impl Add<&Dual> for f64 {
    type Output = Dual;
    fn add(self, rhs: &Dual) -> Dual {
        rhs + self
    }
}

impl Add<Dual> for f64 {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        rhs + self
    }
}
