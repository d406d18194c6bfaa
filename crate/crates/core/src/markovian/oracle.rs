//! Deterministic one-step conditional expectations in `d = 1`: Gauss-Hermite
//! over the Brownian increment, a truncated Poisson sum over the jump count
//! and tensor Gauss-Legendre rules over the marks.

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::quadrature::GaussRule;

pub const HERMITE_ORDER: usize = 16;
/// Legendre order per mark when `k` jumps occur (`k = 1, 2, ...`); the last
/// entry is reused beyond the table.
pub const MARK_ORDERS: [usize; 8] = [20, 10, 6, 4, 3, 2, 2, 1];
pub const POISSON_TAIL: f64 = 1e-12;
pub const MAX_JUMPS: usize = 40;

/// One jump configuration: its probability weight, indices into the mark
/// node table and the realized `sum gamma(e_j)`.
#[derive(Clone, Debug)]
struct JumpConfig {
    weight: f64,
    marks: Vec<usize>,
    gamma_sum: f64,
}

/// Scenario table for one step length `dt`.
#[derive(Clone, Debug)]
pub struct StepQuadrature {
    dt: f64,
    hermite: GaussRule,
    mark_nodes: Vec<f64>,
    configs: Vec<JumpConfig>,
    gamma_compensator: f64,
    /// Poisson mass beyond the truncation point.
    pub tail: f64,
}

/// Local coefficients of one Euler step from `(t, x, y)`.
struct LocalStep {
    mean: f64,
    sigma: f64,
    /// `beta(t, x, y, e)` at every mark node.
    beta: Vec<f64>,
}

impl StepQuadrature {
    pub fn new(spec: &ProblemSpec, dt: f64) -> Result<Self> {
        Self::with_orders(spec, dt, HERMITE_ORDER, &MARK_ORDERS)
    }

    pub fn with_orders(spec: &ProblemSpec, dt: f64, hermite: usize, mark_orders: &[usize]) -> Result<Self> {
        if spec.d != 1 {
            return Err(Error::InvalidArgument(format!(
                "quadrature conditional expectation needs d = 1, got d = {}",
                spec.d
            )));
        }
        if !(dt >= 0.0) || !dt.is_finite() || mark_orders.is_empty() {
            return Err(Error::InvalidArgument(format!("bad step length {dt}")));
        }
        let m = &spec.measure;
        let delta = m.delta();
        let rate = m.total_intensity() * dt;

        let mut mark_nodes = Vec::new();
        let mut configs = vec![JumpConfig {
            weight: (-rate).exp(),
            marks: Vec::new(),
            gamma_sum: 0.0,
        }];
        let mut p = (-rate).exp();
        let mut covered = p;
        let mut k = 0;
        while rate > 0.0 && 1.0 - covered >= POISSON_TAIL && k < MAX_JUMPS {
            k += 1;
            p *= rate / k as f64;
            covered += p;
            let order = mark_orders[(k - 1).min(mark_orders.len() - 1)];
            let rule = GaussRule::legendre_on(order, -delta, delta);
            let base = mark_nodes.len();
            mark_nodes.extend_from_slice(&rule.nodes);
            let w: Vec<f64> = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&e, &w)| w * m.density(e))
                .collect();
            // enumerate the tensor grid
            let mut idx = vec![0usize; k];
            loop {
                let weight = p * idx.iter().map(|&i| w[i]).product::<f64>();
                let gamma_sum = idx.iter().map(|&i| m.gamma(rule.nodes[i])).sum();
                configs.push(JumpConfig {
                    weight,
                    marks: idx.iter().map(|&i| base + i).collect(),
                    gamma_sum,
                });
                let mut j = 0;
                while j < k {
                    idx[j] += 1;
                    if idx[j] < order {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == k {
                    break;
                }
            }
        }
        let tail = (1.0 - covered).max(0.0);
        if rate > 0.0 && tail >= POISSON_TAIL {
            log::warn!("Poisson truncation at {k} jumps leaves tail mass {tail:.2e}");
        }
        Ok(Self {
            dt,
            hermite: GaussRule::hermite_normal(hermite),
            mark_nodes,
            configs,
            gamma_compensator: dt * m.gamma_mass(),
            tail,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scenarios(&self) -> usize {
        self.hermite.len() * self.configs.len()
    }

    fn local(&self, spec: &ProblemSpec, t: f64, x: f64, y: f64) -> LocalStep {
        let c = &spec.coeffs;
        let xd = [Dual::constant(x)];
        let yd = Dual::constant(y);
        let b = c.drift(t, &xd, &yd)[0].value;
        let sigma = c.diffusion(t, &xd, &yd)[0].value;
        let beta: Vec<f64> = self
            .mark_nodes
            .iter()
            .map(|&e| c.jump(t, &xd, &yd, e)[0].value)
            .collect();
        let mut comp = 0.0;
        for (&e, &w) in spec.measure.nodes().iter().zip(spec.measure.weights()) {
            comp += w * c.jump(t, &xd, &yd, e)[0].value;
        }
        LocalStep {
            mean: x + (b - comp) * self.dt,
            sigma,
            beta,
        }
    }

    /// `E[phi(X', dW, M) | X = x]` for one Euler step from `(t, x)` with
    /// `y` frozen in the coefficients, where `M = sum gamma(e_j) - dt int
    /// gamma dlambda`.
    pub fn expect(&self, spec: &ProblemSpec, t: f64, x: f64, y: f64, mut phi: impl FnMut(f64, f64, f64) -> f64) -> f64 {
        let l = self.local(spec, t, x, y);
        let sd = self.dt.sqrt();
        let mut acc = 0.0;
        for cfg in &self.configs {
            let jump: f64 = cfg.marks.iter().map(|&i| l.beta[i]).sum();
            let m = cfg.gamma_sum - self.gamma_compensator;
            let mut inner = 0.0;
            for (&g, &w) in self.hermite.nodes.iter().zip(&self.hermite.weights) {
                let dw = sd * g;
                inner += w * phi(l.mean + l.sigma * dw + jump, dw, m);
            }
            acc += cfg.weight * inner;
        }
        acc
    }

    /// Three projections at once: `(E[v], E[v dW] / dt, E[v M] / dt)` with
    /// `v = phi(X')`.
    pub fn project(&self, spec: &ProblemSpec, t: f64, x: f64, y: f64, phi: impl Fn(f64) -> f64) -> [f64; 3] {
        let l = self.local(spec, t, x, y);
        let sd = self.dt.sqrt();
        let mut acc = [0.0; 3];
        for cfg in &self.configs {
            let jump: f64 = cfg.marks.iter().map(|&i| l.beta[i]).sum();
            let m = cfg.gamma_sum - self.gamma_compensator;
            let mut inner = [0.0; 2];
            for (&g, &w) in self.hermite.nodes.iter().zip(&self.hermite.weights) {
                let dw = sd * g;
                let v = w * phi(l.mean + l.sigma * dw + jump);
                inner[0] += v;
                inner[1] += v * dw;
            }
            acc[0] += cfg.weight * inner[0];
            acc[1] += cfg.weight * inner[1];
            acc[2] += cfg.weight * inner[0] * m;
        }
        if self.dt > 0.0 {
            acc[1] /= self.dt;
            acc[2] /= self.dt;
        } else {
            acc[1] = 0.0;
            acc[2] = 0.0;
        }
        acc
    }
}

/// `E[y_next(X_{n+1}) | X_n = x]` for one Euler step of length `dt` from
/// time `t`, with `y` frozen in the forward coefficients.
pub fn condexp_quadrature_1d(
    spec: &ProblemSpec,
    y_next: &dyn Fn(f64) -> f64,
    t: f64,
    x: f64,
    y: f64,
    dt: f64,
) -> Result<f64> {
    let q = StepQuadrature::new(spec, dt)?;
    let v = q.expect(spec, t, x, y, |xn, _, _| y_next(xn));
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("conditional expectation at x = {x}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::example_1d;

    #[test]
    fn martingale_and_second_moment() {
        let spec = example_1d();
        let dt = 0.05;
        let m = condexp_quadrature_1d(&spec, &|x| x, 0.0, 0.4, 2.0, dt).unwrap();
        assert!((m - 0.4).abs() < 1e-13);
        let s = condexp_quadrature_1d(&spec, &|x| x * x, 0.0, 0.4, 2.0, dt).unwrap();
        let want = 0.16 + dt * (1.0 + 2.0 / 3.0);
        assert!((s - want).abs() < 1e-12, "{s} vs {want}");
    }

    #[test]
    fn zero_step_is_identity() {
        let spec = example_1d();
        let v = condexp_quadrature_1d(&spec, &|x| x.cos(), 0.0, 0.7, 2.0, 0.0).unwrap();
        assert!((v - 0.7f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn truncation_tail_is_small() {
        let spec = example_1d();
        for dt in [0.0125, 0.1, 0.5] {
            let q = StepQuadrature::new(&spec, dt).unwrap();
            assert!(q.tail < POISSON_TAIL, "dt {dt}: {}", q.tail);
        }
    }

    #[test]
    fn projections_of_linear_payoff() {
        let spec = example_1d();
        let q = StepQuadrature::new(&spec, 0.1).unwrap();
        // v = X' = x + dW + jumps - comp: E[v dW]/dt = 1, E[v M]/dt = int e lambda = 0
        let [m, z, g] = q.project(&spec, 0.0, 0.3, 2.0, |x| x);
        assert!((m - 0.3).abs() < 1e-13);
        assert!((z - 1.0).abs() < 1e-12);
        assert!(g.abs() < 1e-12);
        // v = M itself: E[M^2]/dt = int gamma^2 dlambda = 2
        let e = q.expect(&spec, 0.0, 0.3, 2.0, |_, _, m| m * m) / 0.1;
        assert!((e - 2.0).abs() < 1e-10, "{e}");
    }
}
