//! Driving noise for the forward-backward system: Brownian increments,
//! Poisson jump counts with i.i.d. scalar marks, and Gauss-Legendre
//! integration against the Levy measure `lambda(de) = lambda_tot rho(e) de`
//! on `[-delta, delta]`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::quadrature::GaussRule;

pub const DEFAULT_QUAD_ORDER: usize = 32;

/// Probability law of the scalar jump mark on `[-delta, delta]`.
pub trait MarkLaw: Send + Sync + fmt::Debug {
    fn density(&self, e: f64) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

/// Uniform marks on `[-delta, delta]`.
#[derive(Clone, Copy, Debug)]
pub struct UniformMarks {
    pub delta: f64,
}

impl MarkLaw for UniformMarks {
    fn density(&self, e: f64) -> f64 {
        if e.abs() <= self.delta {
            0.5 / self.delta
        } else {
            0.0
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random();
        self.delta * (2.0 * u - 1.0)
    }
}

pub type KernelWeight = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Finite Levy measure with scalar marks and the kernel weight `gamma`.
#[derive(Clone)]
pub struct JumpMeasure {
    delta: f64,
    total_intensity: f64,
    marks: Arc<dyn MarkLaw>,
    gamma: KernelWeight,
    gamma_bound: f64,
    quad_order: usize,
    nodes: Vec<f64>,
    /// `lambda_tot * w_k * rho(e_k)`, so that `sum_k weights[k] g(e_k) ~ int g dlambda`.
    weights: Vec<f64>,
}

impl fmt::Debug for JumpMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpMeasure")
            .field("delta", &self.delta)
            .field("total_intensity", &self.total_intensity)
            .field("marks", &self.marks)
            .field("gamma_bound", &self.gamma_bound)
            .field("quad_order", &self.quad_order)
            .finish()
    }
}

impl JumpMeasure {
    /// `lambda(de) = 1_{[-delta, delta]}(e) de`, i.e. intensity `2 delta`
    /// with uniform marks, and `gamma == 1`.
    pub fn uniform(delta: f64) -> Result<Self> {
        Self::new(
            delta,
            2.0 * delta,
            Arc::new(UniformMarks { delta }),
            Arc::new(|_| 1.0),
            1.0,
            DEFAULT_QUAD_ORDER,
        )
    }

    pub fn new(
        delta: f64,
        total_intensity: f64,
        marks: Arc<dyn MarkLaw>,
        gamma: KernelWeight,
        gamma_bound: f64,
        quad_order: usize,
    ) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mark half-width must be positive, got {delta}"
            )));
        }
        if !(total_intensity >= 0.0) || !total_intensity.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "total intensity must be non-negative, got {total_intensity}"
            )));
        }
        if quad_order == 0 {
            return Err(Error::InvalidArgument("quad_order must be >= 1".into()));
        }
        let rule = GaussRule::legendre_on(quad_order, -delta, delta);
        let weights = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&e, &w)| total_intensity * w * marks.density(e))
            .collect();
        let m = Self {
            delta,
            total_intensity,
            marks,
            gamma,
            gamma_bound,
            quad_order,
            nodes: rule.nodes,
            weights,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks that the mark density integrates to one and that `|gamma|`
    /// respects its bound on the quadrature nodes.
    pub fn validate(&self) -> Result<()> {
        let rule = GaussRule::legendre_on(self.quad_order, -self.delta, self.delta);
        let mass = rule.integrate(|e| self.marks.density(e));
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "mark density integrates to {mass}, expected 1"
            )));
        }
        for &e in &self.nodes {
            let g = (self.gamma)(e);
            if !g.is_finite() || g.abs() > self.gamma_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "|gamma({e})| = {} exceeds bound {}",
                    g.abs(),
                    self.gamma_bound
                )));
            }
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: KernelWeight, gamma_bound: f64) -> Result<Self> {
        self.gamma = gamma;
        self.gamma_bound = gamma_bound;
        self.validate()?;
        Ok(self)
    }

    pub fn with_quad_order(self, quad_order: usize) -> Result<Self> {
        Self::new(
            self.delta,
            self.total_intensity,
            self.marks,
            self.gamma,
            self.gamma_bound,
            quad_order,
        )
    }

    pub fn with_total_intensity(self, total_intensity: f64) -> Result<Self> {
        Self::new(
            self.delta,
            total_intensity,
            self.marks,
            self.gamma,
            self.gamma_bound,
            self.quad_order,
        )
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn total_intensity(&self) -> f64 {
        self.total_intensity
    }

    pub fn gamma_bound(&self) -> f64 {
        self.gamma_bound
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn gamma(&self, e: f64) -> f64 {
        (self.gamma)(e)
    }

    pub fn density(&self, e: f64) -> f64 {
        self.marks.density(e)
    }

    pub fn marks(&self) -> &Arc<dyn MarkLaw> {
        &self.marks
    }

    /// Quadrature nodes on `[-delta, delta]`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Measure weights: `sum_k weights[k] g(nodes[k]) ~ int_E g(e) lambda(de)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Measure weights multiplied by `gamma(e_k)`.
    pub fn gamma_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&e, &w)| w * (self.gamma)(e))
            .collect()
    }

    /// `int_E gamma(e) lambda(de)`.
    pub fn gamma_mass(&self) -> f64 {
        self.gamma_weights().iter().sum()
    }

    /// Realized `int gamma d(mu - nu)` over an interval of length `dt`
    /// containing the given marks.
    pub fn compensated_gamma(&self, marks: &[f64], dt: f64) -> f64 {
        marks.iter().map(|&e| (self.gamma)(e)).sum::<f64>() - dt * self.gamma_mass()
    }
}

/// `int_E g(e) lambda(de)` by Gauss-Legendre quadrature.
pub fn levy_integral(g: impl Fn(f64) -> f64, measure: &JumpMeasure) -> Result<f64> {
    let mut acc = 0.0;
    for (&e, &w) in measure.nodes.iter().zip(&measure.weights) {
        let v = g(e);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("levy integrand at e = {e}")));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Componentwise `int_E beta(e) lambda(de)`: the per-unit-time compensator
/// of the forward jump term.
pub fn compensator_drift(beta_at: impl Fn(f64) -> Vec<f64>, measure: &JumpMeasure) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for (&e, &w) in measure.nodes.iter().zip(&measure.weights) {
        let v = beta_at(e);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        } else if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                context: "compensator_drift",
                expected: acc.len(),
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("jump coefficient at e = {e}")));
            }
            *a += w * x;
        }
    }
    Ok(acc)
}

/// Brownian increments and per-interval jump marks for a batch of paths.
///
/// Jump times are not stored: the Euler scheme only needs the marks that
/// fall into each interval `(t_n, t_{n+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBlock {
    d: usize,
    samples: usize,
    seed: u64,
    grid: TimeGrid,
    /// `[samples][steps][d]`
    dw: Vec<f64>,
    /// CSR offsets into `marks`, length `samples * steps + 1`
    jump_offsets: Vec<u32>,
    marks: Vec<f64>,
}

impl NoiseBlock {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Brownian increment `W_{t_{n+1}} - W_{t_n}` of one path.
    pub fn dw(&self, sample: usize, step: usize) -> &[f64] {
        let start = (sample * self.steps() + step) * self.d;
        &self.dw[start..start + self.d]
    }

    /// Marks of the jumps in `(t_n, t_{n+1}]` of one path.
    pub fn jumps(&self, sample: usize, step: usize) -> &[f64] {
        let cell = sample * self.steps() + step;
        let a = self.jump_offsets[cell] as usize;
        let b = self.jump_offsets[cell + 1] as usize;
        &self.marks[a..b]
    }

    pub fn jump_count(&self, sample: usize, step: usize) -> usize {
        self.jumps(sample, step).len()
    }

    pub fn total_jumps(&self) -> usize {
        self.marks.len()
    }
}

/// Key for the counter-based generator of cell `(sample, step)`.
fn cell_rng(seed: u64, sample: usize, step: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(sample as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(step as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"fbsdejnz");
    ChaCha8Rng::from_seed(key)
}

/// Generates the driving noise for `samples` paths on `grid`.
///
/// Each `(sample, step)` cell draws from its own generator keyed by
/// `(seed, sample, step)`, so the block is a pure function of the inputs
/// and a prefix of samples does not depend on the total sample count.
pub fn make_noise(grid: &TimeGrid, d: usize, samples: usize, measure: &JumpMeasure, seed: u64) -> Result<NoiseBlock> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    // TimeGrid is strictly increasing by construction
    let steps = grid.steps();
    let mut dw = Vec::with_capacity(samples * steps * d);
    let mut jump_offsets = Vec::with_capacity(samples * steps + 1);
    let mut marks = Vec::new();
    jump_offsets.push(0u32);
    let poissons: Vec<Option<Poisson<f64>>> = (0..steps)
        .map(|n| {
            let mean = measure.total_intensity() * grid.dt(n);
            if mean > 0.0 {
                Some(Poisson::new(mean).expect("positive finite Poisson mean"))
            } else {
                None
            }
        })
        .collect();
    let sqrt_dt: Vec<f64> = (0..steps).map(|n| grid.dt(n).sqrt()).collect();
    for s in 0..samples {
        for n in 0..steps {
            let mut rng = cell_rng(seed, s, n);
            for _ in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                dw.push(z * sqrt_dt[n]);
            }
            if let Some(p) = &poissons[n] {
                let k = p.sample(&mut rng) as usize;
                for _ in 0..k {
                    marks.push(measure.marks().sample(&mut rng));
                }
            }
            jump_offsets.push(marks.len() as u32);
        }
    }
    Ok(NoiseBlock {
        d,
        samples,
        seed,
        grid: grid.clone(),
        dw,
        jump_offsets,
        marks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> JumpMeasure {
        JumpMeasure::uniform(1.0).unwrap()
    }

    #[test]
    fn levy_integral_examples() {
        let m = uniform();
        assert!(levy_integral(|e| e, &m).unwrap().abs() < 1e-15);
        assert!((levy_integral(|_| 1.0, &m).unwrap() - 2.0).abs() < 1e-14);
        assert!((levy_integral(|e| e * e, &m).unwrap() - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn levy_integral_exact_up_to_degree() {
        let m = uniform();
        let q = m.quad_order();
        for deg in 0..(2 * q) {
            let got = levy_integral(|e| e.powi(deg as i32), &m).unwrap();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - exact).abs() < 1e-12, "deg {deg}");
        }
    }

    #[test]
    fn levy_integral_rejects_non_finite() {
        let m = uniform();
        assert!(matches!(
            levy_integral(|e| 1.0 / e.signum().min(0.0), &m),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn compensator_examples() {
        let m = uniform();
        let c = compensator_drift(|e| vec![e, e], &m).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-15));
        let c = compensator_drift(|_| vec![0.7], &m).unwrap();
        assert!((c[0] - 1.4).abs() < 1e-14);
        let c = compensator_drift(|_| vec![0.0; 3], &m).unwrap();
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn gamma_bound_enforced() {
        let m = uniform();
        assert!(m.clone().with_gamma(Arc::new(|e| 2.0 * e), 1.0).is_err());
        let ok = m.with_gamma(Arc::new(|e| e), 1.0).unwrap();
        assert!(ok.gamma_mass().abs() < 1e-15);
    }

    #[test]
    fn density_must_normalize() {
        #[derive(Debug)]
        struct Bad;
        impl MarkLaw for Bad {
            fn density(&self, _e: f64) -> f64 {
                1.0
            }
            fn sample(&self, _rng: &mut dyn RngCore) -> f64 {
                0.0
            }
        }
        let r = JumpMeasure::new(1.0, 2.0, Arc::new(Bad), Arc::new(|_| 1.0), 1.0, 16);
        assert!(r.is_err());
    }

    #[test]
    fn make_noise_rejects_bad_args() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let m = uniform();
        assert!(make_noise(&g, 0, 10, &m, 1).is_err());
        assert!(make_noise(&g, 1, 0, &m, 1).is_err());
    }

    #[test]
    fn make_noise_is_deterministic() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let m = uniform();
        let a = make_noise(&g, 3, 50, &m, 99).unwrap();
        let b = make_noise(&g, 3, 50, &m, 99).unwrap();
        assert_eq!(a, b);
        let c = make_noise(&g, 3, 50, &m, 100).unwrap();
        assert_ne!(a.dw, c.dw);
    }

    #[test]
    fn prefix_independent_of_sample_count() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let m = uniform();
        let a = make_noise(&g, 2, 10, &m, 5).unwrap();
        let b = make_noise(&g, 2, 30, &m, 5).unwrap();
        for s in 0..10 {
            for n in 0..5 {
                assert_eq!(a.dw(s, n), b.dw(s, n));
                assert_eq!(a.jumps(s, n), b.jumps(s, n));
            }
        }
    }

    #[test]
    fn zero_intensity_has_no_jumps() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let m = uniform().with_total_intensity(0.0).unwrap();
        let nb = make_noise(&g, 1, 500, &m, 3).unwrap();
        assert_eq!(nb.total_jumps(), 0);
        assert_eq!(levy_integral(|_| 1.0, &m).unwrap(), 0.0);
    }

    #[test]
    fn moments_within_three_sigma() {
        // 50_000 samples x 20 steps = 10^6 intervals
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let m = uniform();
        let samples = 50_000;
        let nb = make_noise(&g, 1, samples, &m, 2024).unwrap();
        let cells = (samples * 20) as f64;
        let dt = 0.05;

        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut count_sum = 0.0;
        let mut count_sum2 = 0.0;
        for s in 0..samples {
            for n in 0..20 {
                let w = nb.dw(s, n)[0];
                sum += w;
                sum2 += w * w;
                let k = nb.jump_count(s, n) as f64;
                count_sum += k;
                count_sum2 += k * k;
            }
        }
        let mean = sum / cells;
        assert!(mean.abs() < 3.0 * (dt / cells).sqrt(), "mean {mean}");
        let var = sum2 / cells - mean * mean;
        // Var of the sample variance of N(0, dt): 2 dt^2 / n
        assert!((var - dt).abs() < 3.0 * (2.0 * dt * dt / cells).sqrt(), "var {var}");

        let lam = 2.0 * dt;
        let cmean = count_sum / cells;
        assert!((cmean - lam).abs() < 3.0 * (lam / cells).sqrt(), "count mean {cmean}");
        let cvar = count_sum2 / cells - cmean * cmean;
        // Var of sample variance for Poisson: (mu + 2 mu^2) / n
        let se = ((lam + 2.0 * lam * lam) / cells).sqrt();
        assert!((cvar - lam).abs() < 3.0 * se, "count var {cvar}");

        let marks = &nb.marks;
        let mm = marks.iter().sum::<f64>() / marks.len() as f64;
        let se = (1.0 / 3.0 / marks.len() as f64).sqrt();
        assert!(mm.abs() < 3.0 * se, "mark mean {mm}");
        assert!(marks.iter().all(|e| e.abs() <= 1.0));
    }
}
