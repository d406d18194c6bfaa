//! Non-neural reference scheme: the Euler system solved by Markovian
//! (Picard) iteration, with conditional expectations either by least-squares
//! regression or, in one dimension, by deterministic quadrature on a
//! spatial grid.

pub mod oracle;
pub mod regression;
mod spline;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::ProblemSpec;
use crate::seed::{derive, tags};
use crate::stochastic::{make_noise, NoiseBlock};

pub use oracle::{condexp_quadrature_1d, StepQuadrature};
pub use regression::{condexp_regress, project_gamma, project_z, BasisKind, Fit, LeastSquares, RegressionBasis};
pub use spline::CubicSpline;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovianConfig {
    pub samples: usize,
    pub basis: RegressionBasis,
    pub ridge: f64,
    pub condition_limit: f64,
    pub max_sweeps: usize,
    /// Stop once the sup-delta falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Points per time level of the sup-delta evaluation grid.
    pub eval_points: usize,
}

impl Default for MarkovianConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            basis: RegressionBasis::polynomial(4),
            ridge: regression::DEFAULT_RIDGE,
            condition_limit: regression::DEFAULT_CONDITION_LIMIT,
            max_sweeps: 20,
            tol: 1e-3,
            seed: 1,
            eval_points: 21,
        }
    }
}

impl MarkovianConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.max_sweeps == 0 || self.eval_points == 0 {
            return Err(Error::Config(
                "markovian samples, max_sweeps and eval_points must be >= 1".into(),
            ));
        }
        if !(self.ridge >= 0.0) || !(self.tol >= 0.0) || !(self.condition_limit > 1.0) {
            return Err(Error::Config(format!(
                "markovian ridge {} / tol {} / condition limit {} out of range",
                self.ridge, self.tol, self.condition_limit
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub m: usize,
    pub sup_delta: f64,
    pub u_at_xi: f64,
    pub condition_number_max: Option<f64>,
}

/// Regression fits at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFit {
    pub u: Fit,
    pub z: Vec<Fit>,
    pub gamma: Fit,
    pub condition: f64,
}

/// Iterate `m` of the regression scheme. With `m = 0` every `u_n` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovianState {
    pub d: usize,
    pub steps: usize,
    pub m: usize,
    /// One entry per `n < steps`; empty when `m = 0`.
    pub fits: Vec<StepFit>,
    pub history: Vec<SweepRecord>,
}

impl MarkovianState {
    pub fn initial(d: usize, steps: usize) -> Self {
        Self {
            d,
            steps,
            m: 0,
            fits: Vec::new(),
            history: Vec::new(),
        }
    }

    /// `u_n(x)`, with `u_N = g`.
    pub fn u(&self, spec: &ProblemSpec, n: usize, x: &[f64]) -> f64 {
        if n >= self.steps {
            spec.terminal_value(x)
        } else if self.fits.is_empty() {
            0.0
        } else {
            self.fits[n].u.eval(x)
        }
    }

    pub fn z(&self, n: usize, x: &[f64]) -> Vec<f64> {
        match self.fits.get(n) {
            Some(f) => f.z.iter().map(|z| z.eval(x)).collect(),
            None => vec![0.0; self.d],
        }
    }

    pub fn gamma(&self, n: usize, x: &[f64]) -> f64 {
        self.fits.get(n).map_or(0.0, |f| f.gamma.eval(x))
    }

    pub fn last(&self) -> Option<&SweepRecord> {
        self.history.last()
    }
}

/// Points `xi + c 1` with `c` uniform in `[-2 sqrt(t), 2 sqrt(t)]`.
pub fn eval_points(xi: &[f64], t: f64, count: usize) -> Vec<Vec<f64>> {
    if t <= 0.0 || count == 1 {
        return vec![xi.to_vec()];
    }
    let r = 2.0 * t.sqrt();
    (0..count)
        .map(|k| {
            let c = -r + 2.0 * r * k as f64 / (count - 1) as f64;
            xi.iter().map(|v| v + c).collect()
        })
        .collect()
}

fn sup_delta(
    grid: &TimeGrid,
    xi: &[f64],
    count: usize,
    mut cur: impl FnMut(usize, &[f64]) -> f64,
    mut prev: impl FnMut(usize, &[f64]) -> f64,
) -> f64 {
    let mut delta: f64 = 0.0;
    for n in 0..grid.steps() {
        for p in eval_points(xi, grid.t(n), count) {
            delta = delta.max((cur(n, &p) - prev(n, &p)).abs());
        }
    }
    delta
}

/// Euler paths `[samples][steps + 1][d]` of the forward equation with
/// `y = y_of(n, X_n)` in the coefficients (only queried for coupled
/// problems).
pub fn euler_forward(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    y_of: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    let d = spec.d;
    let steps = grid.steps();
    if noise.steps() != steps || noise.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "forward noise",
            expected: steps,
            got: noise.steps(),
        });
    }
    let stride = (steps + 1) * d;
    let mut x = vec![0.0; noise.samples() * stride];
    let coupled = spec.coupled();
    x.par_chunks_mut(stride).enumerate().try_for_each(|(s, path)| {
        path[..d].copy_from_slice(&spec.xi);
        for n in 0..steps {
            let (done, rest) = path.split_at_mut((n + 1) * d);
            let xn = &done[n * d..];
            let y = if coupled { y_of(n, xn) } else { 0.0 };
            let next = spec.forward_step(grid.t(n), xn, y, grid.dt(n), noise.dw(s, n), noise.jumps(s, n));
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step: n + 1,
                    detail: format!("non-finite forward state on path {s}"),
                });
            }
            rest[..d].copy_from_slice(&next);
        }
        Ok(())
    })?;
    Ok(x)
}

/// One Markovian sweep: forward simulation under `prev`, then the backward
/// regression recursion
/// `u_n = E_n[Y_{n+1} + dt f(t_n, X_n, Y_{n+1}, Z_n, Gamma_n)]`.
pub fn markovian_sweep(
    prev: &MarkovianState,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    cfg: &MarkovianConfig,
) -> Result<MarkovianState> {
    let d = spec.d;
    let steps = grid.steps();
    let samples = noise.samples();
    let paths = euler_forward(spec, grid, noise, |n, x| prev.u(spec, n, x))?;
    let stride = (steps + 1) * d;
    let x_at = |n: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(samples * d);
        for s in 0..samples {
            out.extend_from_slice(&paths[s * stride + n * d..s * stride + (n + 1) * d]);
        }
        out
    };

    let mut y: Vec<f64> = (0..samples)
        .map(|s| spec.terminal_value(&paths[s * stride + steps * d..(s + 1) * stride]))
        .collect();
    let mut fits = Vec::with_capacity(steps);
    for n in (0..steps).rev() {
        let t = grid.t(n);
        let dt = grid.dt(n);
        let xs = x_at(n);
        let basis = cfg.basis.fitted_to(&xs, d)?;
        let ls = LeastSquares::new(&xs, &basis, cfg.ridge, cfg.condition_limit)?;
        let mut dw = Vec::with_capacity(samples * d);
        let mut mg = Vec::with_capacity(samples);
        for s in 0..samples {
            dw.extend_from_slice(noise.dw(s, n));
            mg.push(spec.measure.compensated_gamma(noise.jumps(s, n), dt));
        }
        // centering by E[Y_{n+1} | X_n] leaves both projections unchanged
        // in expectation and removes most of their variance
        let mean = ls.predict(&ls.fit(&y)?);
        let centered: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let zf = project_z(&ls, &centered, &dw, dt)?;
        let gf = project_gamma(&ls, &centered, &mg, dt)?;
        let zhat: Vec<Vec<f64>> = zf.iter().map(|f| ls.predict(f)).collect();
        let ghat = ls.predict(&gf);
        let target: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|s| {
                let z: Vec<f64> = zhat.iter().map(|c| c[s]).collect();
                let x = &xs[s * d..(s + 1) * d];
                y[s] + dt * spec.driver_value(t, x, y[s], &z, ghat[s])
            })
            .collect();
        if let Some(s) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: n,
                detail: format!("non-finite regression target on path {s}"),
            });
        }
        let uf = ls.fit(&target)?;
        y = ls.predict(&uf);
        fits.push(StepFit {
            u: uf,
            z: zf,
            gamma: gf,
            condition: ls.condition(),
        });
    }
    fits.reverse();

    let mut next = MarkovianState {
        d,
        steps,
        m: prev.m + 1,
        fits,
        history: prev.history.clone(),
    };
    let delta = sup_delta(
        grid,
        &spec.xi,
        cfg.eval_points,
        |n, x| next.u(spec, n, x),
        |n, x| prev.u(spec, n, x),
    );
    let record = SweepRecord {
        m: next.m,
        sup_delta: delta,
        u_at_xi: next.u(spec, 0, &spec.xi),
        condition_number_max: Some(next.fits.iter().map(|f| f.condition).fold(0.0, f64::max)),
    };
    log::info!(
        "markovian sweep {}: sup delta {:.3e}, u(0, xi) = {:.6}",
        record.m,
        record.sup_delta,
        record.u_at_xi
    );
    next.history.push(record);
    Ok(next)
}

/// Sweeps from `u = 0` until the sup-delta drops below `tol` or
/// `max_sweeps` is reached. The same noise is reused by every sweep.
pub fn run_markovian(spec: &ProblemSpec, grid: &TimeGrid, cfg: &MarkovianConfig) -> Result<MarkovianState> {
    cfg.validate()?;
    let noise = make_noise(
        grid,
        spec.d,
        cfg.samples,
        &spec.measure,
        derive(cfg.seed, tags::MARKOVIAN, 0),
    )?;
    let mut state = MarkovianState::initial(spec.d, grid.steps());
    for _ in 0..cfg.max_sweeps {
        state = markovian_sweep(&state, spec, grid, &noise, cfg)?;
        if state.last().is_some_and(|r| r.sup_delta < cfg.tol) {
            break;
        }
    }
    Ok(state)
}

pub fn write_sweeps_csv(history: &[SweepRecord], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "m,sup_delta,u_at_xi,condition_number_max")?;
    for r in history {
        let cond = r.condition_number_max.map(|c| format!("{c:e}")).unwrap_or_default();
        writeln!(f, "{},{:e},{},{}", r.m, r.sup_delta, r.u_at_xi, cond)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    /// Spatial grid `xi +- half_width`.
    pub half_width: f64,
    pub points: usize,
    pub hermite_order: usize,
    pub mark_orders: Vec<usize>,
    pub max_sweeps: usize,
    pub tol: f64,
    pub eval_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 321,
            hermite_order: 12,
            mark_orders: vec![8, 4, 3, 2, 1],
            max_sweeps: 20,
            tol: 1e-3,
            eval_points: 21,
        }
    }
}

/// Quadrature solution of the Euler system on a spatial grid (`d = 1`).
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub xs: Vec<f64>,
    /// `u_n` for `n = 0..=steps`.
    pub u: Vec<CubicSpline>,
    pub z: Vec<CubicSpline>,
    pub gamma: Vec<CubicSpline>,
    pub history: Vec<SweepRecord>,
}

impl GridSolution {
    pub fn steps(&self) -> usize {
        self.z.len()
    }

    pub fn u_at(&self, n: usize, x: f64) -> f64 {
        self.u[n].eval(x)
    }

    pub fn z_at(&self, n: usize, x: f64) -> f64 {
        self.z[n].eval(x)
    }

    pub fn gamma_at(&self, n: usize, x: f64) -> f64 {
        self.gamma[n].eval(x)
    }
}

/// Regression-free Markovian iteration in one dimension: each conditional
/// expectation is a [`StepQuadrature`] at the grid nodes and `u_{n+1}` is
/// interpolated by a cubic spline.
pub fn solve_grid_1d(spec: &ProblemSpec, grid: &TimeGrid, cfg: &GridConfig) -> Result<GridSolution> {
    if spec.d != 1 {
        return Err(Error::InvalidArgument(format!(
            "grid solver needs d = 1, got d = {}",
            spec.d
        )));
    }
    if cfg.points < 4 || !(cfg.half_width > 0.0) || cfg.max_sweeps == 0 {
        return Err(Error::Config(
            "grid solver needs >= 4 points, half_width > 0 and max_sweeps >= 1".into(),
        ));
    }
    let steps = grid.steps();
    let c = spec.xi[0];
    let a = c - cfg.half_width;
    let b = c + cfg.half_width;
    let xs: Vec<f64> = (0..cfg.points)
        .map(|i| a + (b - a) * i as f64 / (cfg.points - 1) as f64)
        .collect();
    let quads = (0..steps)
        .map(|n| StepQuadrature::with_orders(spec, grid.dt(n), cfg.hermite_order, &cfg.mark_orders))
        .collect::<Result<Vec<_>>>()?;
    let terminal = CubicSpline::new(a, b, xs.iter().map(|&x| spec.terminal_value(&[x])).collect())?;
    let zero = CubicSpline::new(a, b, vec![0.0; cfg.points])?;

    let mut u = vec![zero.clone(); steps + 1];
    u[steps] = terminal;
    let mut z = vec![zero.clone(); steps];
    let mut gamma = vec![zero; steps];
    let mut history = Vec::new();
    let coupled = spec.coupled();
    for m in 1..=cfg.max_sweeps {
        let prev = u.clone();
        for n in (0..steps).rev() {
            let t = grid.t(n);
            let dt = grid.dt(n);
            let q = &quads[n];
            let next = &u[n + 1];
            let rows: Vec<[f64; 3]> = xs
                .par_iter()
                .map(|&x| {
                    let y = if coupled { prev[n].eval(x) } else { 0.0 };
                    let [_, zh, gh] = q.project(spec, t, x, y, |xn| next.eval(xn));
                    let un = q.expect(spec, t, x, y, |xn, _, _| {
                        let v = next.eval(xn);
                        v + dt * spec.driver_value(t, &[x], v, &[zh], gh)
                    });
                    [un, zh, gh]
                })
                .collect();
            if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    step: n,
                    detail: format!("non-finite grid value at x = {}", xs[i]),
                });
            }
            u[n] = CubicSpline::new(a, b, rows.iter().map(|r| r[0]).collect())?;
            z[n] = CubicSpline::new(a, b, rows.iter().map(|r| r[1]).collect())?;
            gamma[n] = CubicSpline::new(a, b, rows.iter().map(|r| r[2]).collect())?;
        }
        let delta = sup_delta(
            grid,
            &spec.xi,
            cfg.eval_points,
            |n, x| u[n].eval(x[0]),
            |n, x| prev[n].eval(x[0]),
        );
        history.push(SweepRecord {
            m,
            sup_delta: delta,
            u_at_xi: u[0].eval(c),
            condition_number_max: None,
        });
        if delta < cfg.tol {
            break;
        }
    }
    Ok(GridSolution {
        xs,
        u,
        z,
        gamma,
        history,
    })
}
