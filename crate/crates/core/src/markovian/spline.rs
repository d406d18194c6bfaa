//! Natural cubic spline on a uniform grid, extended linearly outside.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    a: f64,
    h: f64,
    values: Vec<f64>,
    /// Second derivatives at the nodes.
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(a: f64, b: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 || !(b > a) {
            return Err(Error::InvalidArgument(format!(
                "spline needs >= 2 values on a nonempty interval (got {n} on [{a}, {b}])"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the interior equations
            // m_{i-1} + 4 m_i + m_{i+1} = 6 (y_{i-1} - 2 y_i + y_{i+1}) / h^2
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (values[i] - 2.0 * values[i + 1] + values[i + 2]) / (h * h);
                let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
                c[i] = 1.0 / denom;
                d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { second[i + 2] } else { 0.0 };
                second[i + 1] = d[i] - c[i] * next;
            }
        }
        Ok(Self { a, h, values, second })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let b = self.a + self.h * (n - 1) as f64;
        let (y, m, h) = (&self.values, &self.second, self.h);
        if x <= self.a {
            let slope = (y[1] - y[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0;
            return y[0] + slope * (x - self.a);
        }
        if x >= b {
            let slope = (y[n - 1] - y[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
            return y[n - 1] + slope * (x - b);
        }
        let u = (x - self.a) / h;
        let i = (u.floor() as usize).min(n - 2);
        let t = u - i as f64;
        let s = 1.0 - t;
        s * y[i] + t * y[i + 1] + h * h / 6.0 * ((s * s * s - s) * m[i] + (t * t * t - t) * m[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_smooth_function() {
        let n = 161;
        let xs: Vec<f64> = (0..n).map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
        let s = CubicSpline::new(-4.0, 4.0, xs.iter().map(|x| x.sin()).collect()).unwrap();
        for &x in &[-3.33, -0.01, 0.5, 2.71] {
            assert!((s.eval(x) - f64::sin(x)).abs() < 1e-6, "{x}");
        }
        assert!((s.eval(xs[17]) - xs[17].sin()).abs() < 1e-15);
    }

    #[test]
    fn linear_data_is_reproduced_everywhere() {
        let s = CubicSpline::new(0.0, 1.0, (0..6).map(|i| 3.0 * i as f64 / 5.0 - 1.0).collect()).unwrap();
        for &x in &[-2.0, 0.33, 1.5] {
            assert!((s.eval(x) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
    }
}
