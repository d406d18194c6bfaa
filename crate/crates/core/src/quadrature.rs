//! Gauss-Legendre and Gauss-Hermite rules.
//!
//! Nodes are computed by Newton iteration on the three-term recurrences,
//! which is accurate to a few ulps for the orders used here (< 200).

use std::f64::consts::PI;

/// A quadrature rule `sum_k w_k f(x_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// `n`-point Gauss-Legendre rule on `[-1, 1]`, exact for polynomials of
    /// degree `2n - 1`.
    pub fn legendre(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, z);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Gauss-Legendre rule mapped affinely onto `[a, b]`.
    pub fn legendre_on(n: usize, a: f64, b: f64) -> Self {
        let base = Self::legendre(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Self {
            nodes: base.nodes.iter().map(|x| mid + half * x).collect(),
            weights: base.weights.iter().map(|w| half * w).collect(),
        }
    }

    /// `n`-point rule for expectations under the standard normal law:
    /// `E[f(xi)] ~ sum_k w_k f(x_k)` with `sum_k w_k = 1`.
    pub fn hermite_normal(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        // Physicists' rule (weight exp(-x^2)) via orthonormal recurrence.
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 1..=m {
            z = match i {
                1 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                2 => z - 1.14 * nf.powf(0.426) / z,
                3 => 1.86 * z - 0.86 * x[0],
                4 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 3],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i - 1] = z;
            x[n - i] = -z;
            w[i - 1] = 2.0 / (pp * pp);
            w[n - i] = w[i - 1];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let sqrt_pi = PI.sqrt();
        let sqrt2 = 2f64.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * sqrt2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
        // ascending order
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `(P_n(z), P_n'(z))` by the Bonnet recurrence.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_low_orders_match_tables() {
        let r = GaussRule::legendre(2);
        let a = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0] + a).abs() < 1e-15);
        assert!((r.nodes[1] - a).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);

        let r = GaussRule::legendre(3);
        let b = (3.0f64 / 5.0).sqrt();
        assert!((r.nodes[0] + b).abs() < 1e-15);
        assert_eq!(r.nodes[1], 0.0);
        assert!((r.weights[1] - 8.0 / 9.0).abs() < 1e-15);
        assert!((r.weights[0] - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 32, 64] {
            let r = GaussRule::legendre(n);
            for deg in 0..(2 * n) {
                let got = r.integrate(|x| x.powi(deg as i32));
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn legendre_nodes_sorted_inside_interval() {
        let r = GaussRule::legendre(33);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(r.nodes.iter().all(|x| x.abs() < 1.0));
        let total: f64 = r.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_matches_normal_moments() {
        for n in [1usize, 2, 7, 10, 20, 40] {
            let r = GaussRule::hermite_normal(n);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            // E[xi^(2k)] = (2k-1)!!
            let mut double_fact = 1.0;
            for k in 0..n {
                let deg = 2 * k;
                if deg > 2 * n - 1 {
                    break;
                }
                if k > 0 {
                    double_fact *= (2 * k - 1) as f64;
                }
                let got = r.integrate(|x| x.powi(deg as i32));
                assert!(
                    ((got - double_fact) / double_fact).abs() < 1e-11,
                    "n={n} deg={deg}: {got} vs {double_fact}"
                );
                let odd = r.integrate(|x| x.powi(deg as i32 + 1));
                assert!(odd.abs() < 1e-10 * double_fact.max(1.0));
            }
        }
    }

    #[test]
    fn hermite_integrates_cosine() {
        // E[cos(a xi)] = exp(-a^2/2)
        let r = GaussRule::hermite_normal(20);
        let got = r.integrate(|x| (0.7 * x).cos());
        assert!((got - (-0.245f64).exp()).abs() < 1e-14);
    }
}
