//! Error functionals against closed-form solutions, time-discretization rate
//! studies and the loss-versus-error diagnostic.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::deep::{rollout, DriverMode, NetPolicy, OraclePolicy, PathBatch, RolloutOptions};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::markovian::{euler_forward, solve_grid_1d, GridConfig, GridSolution, MarkovianState};
use crate::net::ParamSet;
use crate::problem::ProblemSpec;
use crate::seed::{derive, tags};
use crate::stochastic::{make_noise, NoiseBlock};

/// Where the approximate `(X, Y, Z, Gamma)` come from.
#[derive(Clone, Copy)]
pub enum SolutionSource<'a> {
    /// Trained networks.
    Deep {
        params: &'a ParamSet,
        driver: DriverMode,
    },
    /// The deep scheme driven by the exact `Y_0`, `Z` and `U`.
    Oracle {
        driver: DriverMode,
    },
    Markovian(&'a MarkovianState),
    Grid(&'a GridSolution),
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let stderr = if v.len() > 1 {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { value: m, stderr }
    }
}

/// `max_n E|X - X^pi|^2`, `max_n E|Y - Y^pi|^2` over grid nodes and
/// `sum_n E|Z - Z^pi|^2 dt`, `sum_n E|Gamma - Gamma^pi|^2 dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    pub x_sq: Estimate,
    pub y_sq: Estimate,
    pub z_sq: Estimate,
    pub gamma_sq: Estimate,
    /// `|Y_0 - u(0, xi)|^2` averaged over paths.
    pub y0_sq: Estimate,
    pub samples: usize,
    pub h: f64,
}

impl ErrorReport {
    pub fn total(&self) -> f64 {
        self.x_sq.value + self.y_sq.value + self.z_sq.value + self.gamma_sq.value
    }

    /// Standard error of [`total`](Self::total), treating the four terms as
    /// independent.
    pub fn total_stderr(&self) -> f64 {
        [self.x_sq, self.y_sq, self.z_sq, self.gamma_sq]
            .iter()
            .map(|e| e.stderr * e.stderr)
            .sum::<f64>()
            .sqrt()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "metric,value,stderr")?;
        for (name, e) in [
            ("x_sq", self.x_sq),
            ("y_sq", self.y_sq),
            ("z_sq", self.z_sq),
            ("gamma_sq", self.gamma_sq),
            ("y0_sq", self.y0_sq),
        ] {
            writeln!(f, "{name},{:e},{:e}", e.value, e.stderr)?;
        }
        writeln!(f, "total,{:e},{:e}", self.total(), self.total_stderr())?;
        writeln!(f, "samples,{},", self.samples)?;
        writeln!(f, "h,{:?},", self.h)?;
        Ok(())
    }
}

/// Approximate paths of a [`SolutionSource`] on the given noise.
pub fn source_paths(
    source: SolutionSource<'_>,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<PathBatch> {
    let opts = |driver| RolloutOptions {
        driver,
        ..RolloutOptions::for_dim(spec.d)
    };
    match source {
        SolutionSource::Deep { params, driver } => {
            let policy = NetPolicy { layout: &params.layout };
            rollout(&policy, &params.values, spec, grid, noise, &opts(driver))
        }
        SolutionSource::Oracle { driver } => {
            let policy = OraclePolicy::new(spec)?;
            rollout(&policy, &[], spec, grid, noise, &opts(driver))
        }
        SolutionSource::Markovian(st) => {
            if st.steps != grid.steps() || st.d != spec.d {
                return Err(Error::DimensionMismatch {
                    context: "markovian state",
                    expected: grid.steps(),
                    got: st.steps,
                });
            }
            let x = euler_forward(spec, grid, noise, |n, x| st.u(spec, n, x))?;
            Ok(tabulate(spec, grid, noise.samples(), x, |n, x| {
                (st.u(spec, n, x), st.z(n, x), st.gamma(n, x))
            }))
        }
        SolutionSource::Grid(sol) => {
            if sol.steps() != grid.steps() || spec.d != 1 {
                return Err(Error::DimensionMismatch {
                    context: "grid solution",
                    expected: grid.steps(),
                    got: sol.steps(),
                });
            }
            let x = euler_forward(spec, grid, noise, |n, x| sol.u_at(n, x[0]))?;
            Ok(tabulate(spec, grid, noise.samples(), x, |n, x| {
                if n < sol.steps() {
                    (sol.u_at(n, x[0]), vec![sol.z_at(n, x[0])], sol.gamma_at(n, x[0]))
                } else {
                    (sol.u_at(n, x[0]), Vec::new(), 0.0)
                }
            }))
        }
    }
}

/// Fills `Y`, `Z`, `Gamma` from functions of the state.
fn tabulate(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    samples: usize,
    x: Vec<f64>,
    f: impl Fn(usize, &[f64]) -> (f64, Vec<f64>, f64) + Sync,
) -> PathBatch {
    let d = spec.d;
    let steps = grid.steps();
    let stride = (steps + 1) * d;
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let path = &x[s * stride..(s + 1) * stride];
            let mut y = Vec::with_capacity(steps + 1);
            let mut z = Vec::with_capacity(steps * d);
            let mut g = Vec::with_capacity(steps);
            for n in 0..=steps {
                let (yn, zn, gn) = f(n, &path[n * d..(n + 1) * d]);
                y.push(yn);
                if n < steps {
                    z.extend_from_slice(&zn);
                    g.push(gn);
                }
            }
            let terminal = spec.terminal_value(&path[steps * d..]);
            (y, z, g, terminal)
        })
        .collect();
    let mut batch = PathBatch {
        samples,
        steps,
        d,
        x,
        y: Vec::with_capacity(samples * (steps + 1)),
        z: Vec::with_capacity(samples * steps * d),
        gamma: Vec::with_capacity(samples * steps),
        terminal: Vec::with_capacity(samples),
    };
    for (y, z, g, t) in rows {
        batch.y.extend(y);
        batch.z.extend(z);
        batch.gamma.extend(g);
        batch.terminal.push(t);
    }
    batch
}

/// Error functional of `source` against the closed-form solution on
/// `samples` fresh paths.
///
/// The reference state is the Euler path driven by the same noise with the
/// exact `u` in the coefficients; reference `Y`, `Z`, `Gamma` are
/// `u`, `sigma^T grad u` and `int (u(x + beta) - u(x)) gamma dlambda` on it.
pub fn measure_errors(
    source: SolutionSource<'_>,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    samples: usize,
    seed: u64,
) -> Result<ErrorReport> {
    spec.require_exact()?;
    let noise = make_noise(grid, spec.d, samples, &spec.measure, derive(seed, tags::ERRORS, 0))?;
    let approx = source_paths(source, spec, grid, &noise)?;
    let exact_y = |n: usize, x: &[f64]| spec.exact_u(grid.t(n), x).unwrap_or(f64::NAN);
    let reference_x = euler_forward(spec, grid, &noise, exact_y)?;
    errors_against_exact(spec, grid, &approx, &reference_x)
}

fn errors_against_exact(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    approx: &PathBatch,
    reference_x: &[f64],
) -> Result<ErrorReport> {
    let d = spec.d;
    let steps = grid.steps();
    let samples = approx.samples;
    let stride = (steps + 1) * d;
    let missing = || Error::MissingExactSolution(spec.name.clone());

    // per sample: squared errors of X and Y at every node, summed Z and Gamma terms
    let per_sample = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
            let mut ex = Vec::with_capacity(steps + 1);
            let mut ey = Vec::with_capacity(steps + 1);
            let (mut ez, mut eg) = (0.0, 0.0);
            for n in 0..=steps {
                let t = grid.t(n);
                let xr = &reference_x[s * stride + n * d..s * stride + (n + 1) * d];
                let xa = approx.x_at(s, n);
                ex.push(xr.iter().zip(xa).map(|(a, b)| (a - b) * (a - b)).sum());
                let yr = spec.exact_u(t, xr).ok_or_else(missing)?;
                let ya = approx.y_at(s, n);
                ey.push((yr - ya) * (yr - ya));
                if n < steps {
                    let dt = grid.dt(n);
                    let zr = spec.exact_z(t, xr).ok_or_else(missing)?;
                    let za = approx.z_at(s, n);
                    ez += dt * zr.iter().zip(za).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    let gr = spec.exact_gamma(t, xr).ok_or_else(missing)?;
                    let ga = approx.gamma_at(s, n);
                    eg += dt * (gr - ga) * (gr - ga);
                }
            }
            Ok((ex, ey, ez, eg))
        })
        .collect::<Result<Vec<_>>>()?;

    let node_sup = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>, f64, f64)) -> &Vec<f64>| -> Estimate {
        (0..=steps)
            .map(|n| Estimate::of(&per_sample.iter().map(|r| pick(r)[n]).collect::<Vec<_>>()))
            .fold(
                Estimate {
                    value: 0.0,
                    stderr: 0.0,
                },
                |a, b| if b.value > a.value { b } else { a },
            )
    };
    let x_sq = node_sup(&|r| &r.0);
    let y_sq = node_sup(&|r| &r.1);
    let y0_sq = Estimate::of(&per_sample.iter().map(|r| r.1[0]).collect::<Vec<_>>());
    let z_sq = Estimate::of(&per_sample.iter().map(|r| r.2).collect::<Vec<_>>());
    let gamma_sq = Estimate::of(&per_sample.iter().map(|r| r.3).collect::<Vec<_>>());
    let report = ErrorReport {
        x_sq,
        y_sq,
        z_sq,
        gamma_sq,
        y0_sq,
        samples,
        h: grid.h(),
    };
    if [x_sq, y_sq, z_sq, gamma_sq].iter().any(|e| !e.value.is_finite()) {
        return Err(Error::NonFinite("error report".into()));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// Deep scheme with the exact policy: pure time-discretization error.
    OraclePolicy,
    /// Quadrature Markovian scheme on a spatial grid (`d = 1`).
    MarkovianQuadrature,
}

impl RateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" | "oracle_policy" => Ok(RateMode::OraclePolicy),
            "markovian" | "markovian_quadrature" => Ok(RateMode::MarkovianQuadrature),
            other => Err(Error::Config(format!(
                "unknown rate mode `{other}` (expected oracle | markovian_quadrature)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RateMode::OraclePolicy => "oracle_policy",
            RateMode::MarkovianQuadrature => "markovian_quadrature",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateLevel {
    pub steps: usize,
    pub h: f64,
    pub error: f64,
    pub stderr: f64,
    pub report: ErrorReport,
}

/// Log-log least-squares fit `ln error = intercept + slope ln h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub mode: RateMode,
    pub levels: Vec<RateLevel>,
    /// `None` when some error is zero or the errors do not vary.
    pub fit: Option<LogLogFit>,
    /// Some level-to-level change is within two standard errors.
    pub noisy: bool,
}

impl RateReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "h,error,stderr")?;
        for l in &self.levels {
            writeln!(f, "{:?},{:e},{:e}", l.h, l.error, l.stderr)?;
        }
        match &self.fit {
            Some(fit) => {
                writeln!(f, "slope,{},{}", fit.slope, fit.slope_stderr)?;
                writeln!(f, "r_squared,{},", fit.r_squared)?;
            }
            None => writeln!(f, "slope,degenerate,")?,
        }
        Ok(())
    }
}

/// Ordinary least squares of `ln e` on `ln h`.
pub fn loglog_fit(h: &[f64], e: &[f64]) -> Option<LogLogFit> {
    if h.len() != e.len() || h.len() < 2 || e.iter().chain(h).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let slope_stderr = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LogLogFit {
        slope,
        intercept,
        r_squared: 1.0 - sse / syy,
        slope_stderr,
    })
}

/// Total squared error at each `N` in `steps_list` and its log-log slope
/// against `h = T / N`.
pub fn rate_study(
    spec: &ProblemSpec,
    steps_list: &[usize],
    samples: usize,
    mode: RateMode,
    seed: u64,
) -> Result<RateReport> {
    let mut ns = steps_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 || ns[0] == 0 {
        return Err(Error::InvalidArgument(
            "rate study needs at least 3 distinct positive step counts".into(),
        ));
    }
    if mode == RateMode::MarkovianQuadrature && spec.d != 1 {
        return Err(Error::InvalidArgument(
            "markovian_quadrature rate study needs d = 1".into(),
        ));
    }
    spec.require_exact()?;
    let mut levels = Vec::with_capacity(ns.len());
    for (k, &n) in ns.iter().enumerate() {
        let grid = TimeGrid::uniform(spec.terminal_time, n)?;
        let level_seed = derive(seed, tags::RATE, k as u64);
        let report = match mode {
            RateMode::OraclePolicy => measure_errors(
                SolutionSource::Oracle {
                    driver: DriverMode::Explicit,
                },
                spec,
                &grid,
                samples,
                level_seed,
            )?,
            RateMode::MarkovianQuadrature => {
                let sol = solve_grid_1d(spec, &grid, &GridConfig::default())?;
                measure_errors(SolutionSource::Grid(&sol), spec, &grid, samples, level_seed)?
            }
        };
        log::info!("rate level N = {n}: total squared error {:.4e}", report.total());
        levels.push(RateLevel {
            steps: n,
            h: grid.h(),
            error: report.total(),
            stderr: report.total_stderr(),
            report,
        });
    }
    let noisy = levels
        .windows(2)
        .any(|w| (w[0].error - w[1].error).abs() < 2.0 * (w[0].stderr + w[1].stderr));
    if noisy {
        log::warn!("rate study: statistical error bars exceed level-to-level differences");
    }
    let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let e: Vec<f64> = levels.iter().map(|l| l.error).collect();
    Ok(RateReport {
        mode,
        levels,
        fit: loglog_fit(&h, &e),
        noisy,
    })
}

/// Outcome of the loss-versus-error diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCheck {
    pub points: usize,
    /// `None` when either variable is constant.
    pub spearman: Option<f64>,
    /// Least-squares fit of `error = a + b loss` under `a, b >= 0`.
    pub a: f64,
    pub b: f64,
    /// Smallest `a' >= a` with `error <= a' + b loss` at every point.
    pub envelope_a: f64,
}

impl PosteriorCheck {
    /// The fitted bound uses the loss (`b > 0`).
    pub fn bound_fits(&self) -> bool {
        self.b > 0.0 && self.a >= 0.0
    }
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Two-parameter nonnegative least squares by enumerating active sets.
fn nonnegative_affine(loss: &[f64], err: &[f64]) -> (f64, f64) {
    let n = loss.len() as f64;
    let sse = |a: f64, b: f64| -> f64 {
        loss.iter()
            .zip(err)
            .map(|(l, e)| {
                let r = e - a - b * l;
                r * r
            })
            .sum()
    };
    let ml = loss.iter().sum::<f64>() / n;
    let me = err.iter().sum::<f64>() / n;
    let sll: f64 = loss.iter().map(|l| (l - ml) * (l - ml)).sum();
    let sle: f64 = loss.iter().zip(err).map(|(l, e)| (l - ml) * (e - me)).sum();
    let mut candidates = vec![(0.0, 0.0), (me.max(0.0), 0.0)];
    let l2: f64 = loss.iter().map(|l| l * l).sum();
    if l2 > 0.0 {
        let b = (loss.iter().zip(err).map(|(l, e)| l * e).sum::<f64>() / l2).max(0.0);
        candidates.push((0.0, b));
    }
    if sll > 0.0 {
        let b = sle / sll;
        let a = me - b * ml;
        if a >= 0.0 && b >= 0.0 {
            candidates.push((a, b));
        }
    }
    candidates
        .into_iter()
        .min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1)))
        .expect("nonempty")
}

/// Rank correlation between the terminal loss and the squared `Y_0` error
/// across checkpoints, plus a nonnegative affine fit
/// `error <= a + b loss`. `points` are `(loss, error)` pairs.
pub fn posterior_check(points: &[(f64, f64)]) -> Result<PosteriorCheck> {
    if points.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "posterior check needs at least 5 checkpoints, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(l, e)| !l.is_finite() || !e.is_finite()) {
        return Err(Error::NonFinite("posterior check input".into()));
    }
    let loss: Vec<f64> = points.iter().map(|p| p.0).collect();
    let err: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (a, b) = nonnegative_affine(&loss, &err);
    let envelope_a = loss.iter().zip(&err).map(|(l, e)| e - b * l).fold(a, f64::max);
    Ok(PosteriorCheck {
        points: points.len(),
        spearman: spearman(&loss, &err),
        a,
        b,
        envelope_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_monotone_and_constant() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.1, 0.5, 0.6, 2.0, 9.0];
        assert_eq!(spearman(&a, &b), Some(1.0));
        let c = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&a, &c), Some(-1.0));
        assert_eq!(spearman(&a, &[1.0; 5]), None);
    }

    #[test]
    fn posterior_on_table_trajectory() {
        // loss and |y0 - 2| columns of the published d = 1 trajectory
        let loss = [0.81499, 0.17286, 0.14002, 0.13258, 0.12275];
        let mean = [1.63119, 1.91521, 1.96693, 1.98162, 1.99324];
        let pts: Vec<(f64, f64)> = loss
            .iter()
            .zip(&mean)
            .map(|(l, m)| (*l, (m - 2.0) * (m - 2.0)))
            .collect();
        let c = posterior_check(&pts).unwrap();
        assert_eq!(c.spearman, Some(1.0));
        assert!(c.bound_fits());
        for (l, e) in &pts {
            assert!(*e <= c.envelope_a + c.b * l + 1e-15);
        }
    }

    #[test]
    fn posterior_recovers_planted_slope() {
        let pts: Vec<(f64, f64)> = (1..=8).map(|k| (k as f64 * 0.1, 0.05 * k as f64)).collect();
        let c = posterior_check(&pts).unwrap();
        assert!((c.b - 0.5).abs() < 1e-12);
        assert!(c.a.abs() < 1e-12);
    }

    #[test]
    fn posterior_degenerate_and_short_inputs() {
        let pts = vec![(0.3, 0.1), (0.3, 0.2), (0.3, 0.05), (0.3, 0.4), (0.3, 0.3)];
        assert_eq!(posterior_check(&pts).unwrap().spearman, None);
        assert!(posterior_check(&pts[..3]).is_err());
    }

    #[test]
    fn anticorrelated_input_does_not_fit() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, 10.0 - k as f64)).collect();
        let c = posterior_check(&pts).unwrap();
        assert_eq!(c.b, 0.0);
        assert!(!c.bound_fits());
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v.powf(1.1)).collect();
        let f = loglog_fit(&h, &e).unwrap();
        assert!((f.slope - 1.1).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(loglog_fit(&h, &[0.0, 1.0, 1.0, 1.0]).is_none());
        assert!(loglog_fit(&h, &[1.0; 4]).is_none());
    }

    #[test]
    fn estimate_mean_and_stderr() {
        let e = Estimate::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
