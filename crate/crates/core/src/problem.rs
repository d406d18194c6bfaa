//! Coefficient bundles `(b, sigma, beta, f, g)` of a forward-backward
//! system with jumps, the benchmark problems and a finite-difference
//! PIDE residual.

use std::fmt;
use std::sync::Arc;

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::stochastic::{levy_integral, JumpMeasure};

/// Coefficients of
///
/// ```text
/// dX = b dt + sigma dW + int beta mu~(de, dt)
/// -dY = f(t, X, Y, Z, Gamma) dt - Z dW - int U(e) mu~(de, dt),   Y_T = g(X_T)
/// ```
///
/// All methods take [`Dual`] arguments so that the same code yields values
/// and local Jacobians. Matrices are row-major `d x d`.
pub trait Coefficients: Send + Sync {
    fn drift(&self, t: f64, x: &[Dual], y: &Dual) -> Vec<Dual>;

    fn diffusion(&self, t: f64, x: &[Dual], y: &Dual) -> Vec<Dual>;

    /// `sigma(t, x, y) dw`.
    fn diffusion_times(&self, t: f64, x: &[Dual], y: &Dual, dw: &[f64]) -> Vec<Dual> {
        let d = x.len();
        let s = self.diffusion(t, x, y);
        (0..d)
            .map(|i| {
                let mut acc = Dual::constant(0.0);
                for (j, w) in dw.iter().enumerate() {
                    acc += &(&s[i * d + j] * *w);
                }
                acc
            })
            .collect()
    }

    /// `sigma(t, x, y)^T v`.
    fn diffusion_transpose_times(&self, t: f64, x: &[Dual], y: &Dual, v: &[Dual]) -> Vec<Dual> {
        let d = x.len();
        let s = self.diffusion(t, x, y);
        (0..d)
            .map(|j| {
                let mut acc = Dual::constant(0.0);
                for (i, vi) in v.iter().enumerate() {
                    acc += &(&s[i * d + j] * vi);
                }
                acc
            })
            .collect()
    }

    fn jump(&self, t: f64, x: &[Dual], y: &Dual, e: f64) -> Vec<Dual>;

    fn driver(&self, t: f64, x: &[Dual], y: &Dual, z: &[Dual], gamma: &Dual) -> Dual;

    fn terminal(&self, x: &[Dual]) -> Dual;

    /// Closed-form solution `u(t, x)` if known.
    fn exact(&self, _t: f64, _x: &[Dual]) -> Option<Dual> {
        None
    }

    /// True when `b`, `sigma` or `beta` depend on `y`.
    fn coupled(&self) -> bool {
        false
    }
}

/// How the scalar mark enters the `d`-dimensional forward state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkMode {
    /// `beta(e) = (e / d) 1`, so the coordinate sum jumps by `e`.
    #[default]
    Consistent,
    /// `beta(e) = e 1`, every coordinate jumps by `e`.
    PerCoordinate,
}

impl MarkMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(MarkMode::Consistent),
            "per_coordinate" => Ok(MarkMode::PerCoordinate),
            other => Err(Error::Config(format!(
                "unknown mark mode `{other}` (expected consistent | per_coordinate)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MarkMode::Consistent => "consistent",
            MarkMode::PerCoordinate => "per_coordinate",
        }
    }
}

/// One FBSDEJ / PIDE instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub d: usize,
    pub terminal_time: f64,
    pub xi: Vec<f64>,
    pub measure: JumpMeasure,
    pub coeffs: Arc<dyn Coefficients>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("terminal_time", &self.terminal_time)
            .field("xi", &self.xi)
            .field("measure", &self.measure)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        terminal_time: f64,
        xi: Vec<f64>,
        measure: JumpMeasure,
        coeffs: Arc<dyn Coefficients>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if xi.len() != d {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: d,
                got: xi.len(),
            });
        }
        if !(terminal_time > 0.0) || !terminal_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "terminal time must be positive, got {terminal_time}"
            )));
        }
        Ok(Self {
            name: name.into(),
            d,
            terminal_time,
            xi,
            measure,
            coeffs,
        })
    }

    pub fn coupled(&self) -> bool {
        self.coeffs.coupled()
    }

    pub fn has_exact(&self) -> bool {
        self.exact_u(0.0, &self.xi).is_some()
    }

    pub fn exact_u(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.coeffs.exact(t, &Dual::constants(x)).map(|u| u.value)
    }

    pub fn require_exact(&self) -> Result<()> {
        if self.has_exact() {
            Ok(())
        } else {
            Err(Error::MissingExactSolution(self.name.clone()))
        }
    }

    /// `(u, grad_x u)` of the exact solution.
    pub fn exact_grad(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let xv = Dual::variables(x, 0, x.len());
        self.coeffs.exact(t, &xv).map(|u| {
            let g = (0..x.len()).map(|i| u.partial(i)).collect();
            (u.value, g)
        })
    }

    /// `Z = sigma^T grad u` along the exact solution.
    pub fn exact_z(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let (u, g) = self.exact_grad(t, x)?;
        let xd = Dual::constants(x);
        let gd = Dual::constants(&g);
        let z = self.coeffs.diffusion_transpose_times(t, &xd, &Dual::constant(u), &gd);
        Some(z.into_iter().map(|v| v.value).collect())
    }

    /// `U(e) = u(t, x + beta(t, x, u, e)) - u(t, x)` along the exact solution.
    pub fn exact_kernel(&self, t: f64, x: &[f64], e: f64) -> Option<f64> {
        let u = self.exact_u(t, x)?;
        let shifted = self.shifted(t, x, u, e);
        Some(self.exact_u(t, &shifted)? - u)
    }

    /// `Gamma = int U(e) gamma(e) lambda(de)` along the exact solution.
    pub fn exact_gamma(&self, t: f64, x: &[f64]) -> Option<f64> {
        let u = self.exact_u(t, x)?;
        let mut acc = 0.0;
        for (&e, &w) in self.measure.nodes().iter().zip(self.measure.weights()) {
            let shifted = self.shifted(t, x, u, e);
            acc += w * self.measure.gamma(e) * (self.exact_u(t, &shifted)? - u);
        }
        Some(acc)
    }

    /// `x + beta(t, x, y, e)`.
    pub fn shifted(&self, t: f64, x: &[f64], y: f64, e: f64) -> Vec<f64> {
        let b = self.coeffs.jump(t, &Dual::constants(x), &Dual::constant(y), e);
        x.iter().zip(&b).map(|(a, j)| a + j.value).collect()
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.coeffs.terminal(&Dual::constants(x)).value
    }

    pub fn driver_value(&self, t: f64, x: &[f64], y: f64, z: &[f64], gamma: f64) -> f64 {
        self.coeffs
            .driver(
                t,
                &Dual::constants(x),
                &Dual::constant(y),
                &Dual::constants(z),
                &Dual::constant(gamma),
            )
            .value
    }

    /// Euler step of the forward equation with `y` frozen:
    /// `x + b dt + sigma dw + sum_j beta(e_j) - dt int beta dlambda`.
    pub fn forward_step(&self, t: f64, x: &[f64], y: f64, dt: f64, dw: &[f64], marks: &[f64]) -> Vec<f64> {
        let xd = Dual::constants(x);
        let yd = Dual::constant(y);
        forward_step_dual(self, t, &xd, &yd, dt, dw, marks)
            .into_iter()
            .map(|v| v.value)
            .collect()
    }
}

/// Forward Euler step on dual numbers (see [`ProblemSpec::forward_step`]).
pub fn forward_step_dual(
    spec: &ProblemSpec,
    t: f64,
    x: &[Dual],
    y: &Dual,
    dt: f64,
    dw: &[f64],
    marks: &[f64],
) -> Vec<Dual> {
    let c = &spec.coeffs;
    let b = c.drift(t, x, y);
    let s = c.diffusion_times(t, x, y, dw);
    let mut out: Vec<Dual> = x
        .iter()
        .zip(b.iter().zip(&s))
        .map(|(xi, (bi, si))| xi + &(bi * dt) + si)
        .collect();
    for &e in marks {
        let j = c.jump(t, x, y, e);
        for (o, ji) in out.iter_mut().zip(&j) {
            *o += ji;
        }
    }
    for (&e, &w) in spec.measure.nodes().iter().zip(spec.measure.weights()) {
        if w == 0.0 {
            continue;
        }
        let j = c.jump(t, x, y, e);
        for (o, ji) in out.iter_mut().zip(&j) {
            *o += &(ji * (-dt * w));
        }
    }
    out
}

fn sin_sum_plus_two(arg: &Dual) -> Dual {
    arg.sin() + 2.0
}

/// Driver shared by both benchmarks, written in the aggregate coordinate
/// `s = sin(xbar + t) + 2` and the aggregate gradient term `zbar`.
fn benchmark_driver(s: &Dual, y: &Dual, zbar: &Dual, gamma: &Dual) -> Dual {
    let a = (y - 2.0) * y.exp() / (s.exp() * 2.0);
    let b = y * zbar / s;
    a - b - gamma
}

/// One-dimensional benchmark: `b = 0`, `sigma = 1`, `beta(e) = e`,
/// exact solution `u(t, x) = sin(x + t) + 2`.
#[derive(Clone, Copy, Debug)]
pub struct Example1d {
    pub terminal_time: f64,
    /// Additional drift `b = kappa * y`; zero for the benchmark.
    pub kappa: f64,
}

impl Coefficients for Example1d {
    fn drift(&self, _t: f64, _x: &[Dual], y: &Dual) -> Vec<Dual> {
        if self.kappa == 0.0 {
            vec![Dual::constant(0.0)]
        } else {
            vec![y * self.kappa]
        }
    }

    fn diffusion(&self, _t: f64, _x: &[Dual], _y: &Dual) -> Vec<Dual> {
        vec![Dual::constant(1.0)]
    }

    fn diffusion_times(&self, _t: f64, _x: &[Dual], _y: &Dual, dw: &[f64]) -> Vec<Dual> {
        vec![Dual::constant(dw[0])]
    }

    fn jump(&self, _t: f64, _x: &[Dual], _y: &Dual, e: f64) -> Vec<Dual> {
        vec![Dual::constant(e)]
    }

    fn driver(&self, t: f64, x: &[Dual], y: &Dual, z: &[Dual], gamma: &Dual) -> Dual {
        let s = sin_sum_plus_two(&(&x[0] + t));
        benchmark_driver(&s, y, &z[0], gamma)
    }

    fn terminal(&self, x: &[Dual]) -> Dual {
        sin_sum_plus_two(&(&x[0] + self.terminal_time))
    }

    fn exact(&self, t: f64, x: &[Dual]) -> Option<Dual> {
        if self.kappa != 0.0 {
            return None;
        }
        Some(sin_sum_plus_two(&(&x[0] + t)))
    }

    fn coupled(&self) -> bool {
        self.kappa != 0.0
    }
}

/// High-dimensional benchmark: `b = 0`, `sigma = I / sqrt(d)`, solution
/// `u(t, x) = sin(xbar + t) + 2` with `xbar = sum_i x_i`.
///
/// The gradient term of the driver is `y * sum_i z_i / (sqrt(d) s)`, which
/// reduces to `y z / s` for `d = 1`.
#[derive(Clone, Copy, Debug)]
pub struct ExampleHighDim {
    pub d: usize,
    pub terminal_time: f64,
    pub mode: MarkMode,
}

impl ExampleHighDim {
    fn scale(&self) -> f64 {
        1.0 / (self.d as f64).sqrt()
    }
}

impl Coefficients for ExampleHighDim {
    fn drift(&self, _t: f64, _x: &[Dual], _y: &Dual) -> Vec<Dual> {
        vec![Dual::constant(0.0); self.d]
    }

    fn diffusion(&self, _t: f64, _x: &[Dual], _y: &Dual) -> Vec<Dual> {
        let mut m = vec![Dual::constant(0.0); self.d * self.d];
        for i in 0..self.d {
            m[i * self.d + i] = Dual::constant(self.scale());
        }
        m
    }

    fn diffusion_times(&self, _t: f64, _x: &[Dual], _y: &Dual, dw: &[f64]) -> Vec<Dual> {
        let c = self.scale();
        dw.iter().map(|w| Dual::constant(c * w)).collect()
    }

    fn diffusion_transpose_times(&self, _t: f64, _x: &[Dual], _y: &Dual, v: &[Dual]) -> Vec<Dual> {
        let c = self.scale();
        v.iter().map(|vi| vi * c).collect()
    }

    fn jump(&self, _t: f64, _x: &[Dual], _y: &Dual, e: f64) -> Vec<Dual> {
        let v = match self.mode {
            MarkMode::Consistent => e / self.d as f64,
            MarkMode::PerCoordinate => e,
        };
        vec![Dual::constant(v); self.d]
    }

    fn driver(&self, t: f64, x: &[Dual], y: &Dual, z: &[Dual], gamma: &Dual) -> Dual {
        let s = sin_sum_plus_two(&(Dual::sum(x) + t));
        let zbar = Dual::sum(z) * self.scale();
        benchmark_driver(&s, y, &zbar, gamma)
    }

    fn terminal(&self, x: &[Dual]) -> Dual {
        sin_sum_plus_two(&(Dual::sum(x) + self.terminal_time))
    }

    fn exact(&self, t: f64, x: &[Dual]) -> Option<Dual> {
        match self.mode {
            MarkMode::Consistent => Some(sin_sum_plus_two(&(Dual::sum(x) + t))),
            MarkMode::PerCoordinate => None,
        }
    }
}

pub type DriftFn = Arc<dyn Fn(f64, &[Dual], &Dual) -> Vec<Dual> + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(f64, &[Dual], &Dual, f64) -> Vec<Dual> + Send + Sync>;
pub type DriverFn = Arc<dyn Fn(f64, &[Dual], &Dual, &[Dual], &Dual) -> Dual + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[Dual]) -> Dual + Send + Sync>;
pub type ExactFn = Arc<dyn Fn(f64, &[Dual]) -> Dual + Send + Sync>;

/// Coefficients assembled from closures; every part defaults to zero.
#[derive(Clone)]
pub struct FnCoefficients {
    pub d: usize,
    pub drift: Option<DriftFn>,
    /// Row-major `d x d`.
    pub diffusion: Option<DriftFn>,
    pub jump: Option<JumpFn>,
    pub driver: Option<DriverFn>,
    pub terminal: Option<TerminalFn>,
    pub exact: Option<ExactFn>,
    pub coupled: bool,
}

impl FnCoefficients {
    pub fn zero(d: usize) -> Self {
        Self {
            d,
            drift: None,
            diffusion: None,
            jump: None,
            driver: None,
            terminal: None,
            exact: None,
            coupled: false,
        }
    }

    /// `sigma = c I`.
    pub fn with_scalar_diffusion(mut self, c: f64) -> Self {
        let d = self.d;
        self.diffusion = Some(Arc::new(move |_t, _x, _y| {
            let mut m = vec![Dual::constant(0.0); d * d];
            for i in 0..d {
                m[i * d + i] = Dual::constant(c);
            }
            m
        }));
        self
    }

    /// `g = c` and `u = c`.
    pub fn with_constant_solution(mut self, c: f64) -> Self {
        self.terminal = Some(Arc::new(move |_x| Dual::constant(c)));
        self.exact = Some(Arc::new(move |_t, _x| Dual::constant(c)));
        self
    }
}

impl Coefficients for FnCoefficients {
    fn drift(&self, t: f64, x: &[Dual], y: &Dual) -> Vec<Dual> {
        match &self.drift {
            Some(f) => f(t, x, y),
            None => vec![Dual::constant(0.0); self.d],
        }
    }

    fn diffusion(&self, t: f64, x: &[Dual], y: &Dual) -> Vec<Dual> {
        match &self.diffusion {
            Some(f) => f(t, x, y),
            None => vec![Dual::constant(0.0); self.d * self.d],
        }
    }

    fn jump(&self, t: f64, x: &[Dual], y: &Dual, e: f64) -> Vec<Dual> {
        match &self.jump {
            Some(f) => f(t, x, y, e),
            None => vec![Dual::constant(0.0); self.d],
        }
    }

    fn driver(&self, t: f64, x: &[Dual], y: &Dual, z: &[Dual], gamma: &Dual) -> Dual {
        match &self.driver {
            Some(f) => f(t, x, y, z, gamma),
            None => Dual::constant(0.0),
        }
    }

    fn terminal(&self, x: &[Dual]) -> Dual {
        match &self.terminal {
            Some(f) => f(x),
            None => Dual::constant(0.0),
        }
    }

    fn exact(&self, t: f64, x: &[Dual]) -> Option<Dual> {
        self.exact.as_ref().map(|f| f(t, x))
    }

    fn coupled(&self) -> bool {
        self.coupled
    }
}

pub fn example_1d() -> ProblemSpec {
    example_1d_with(1.0, 1.0).expect("benchmark parameters are valid")
}

pub fn example_1d_with(terminal_time: f64, delta: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(
        "example1",
        1,
        terminal_time,
        vec![0.0],
        JumpMeasure::uniform(delta)?,
        Arc::new(Example1d {
            terminal_time,
            kappa: 0.0,
        }),
    )
}

/// `example_1d` with the extra drift `b = kappa * y`, which couples the
/// forward equation to the backward one. No closed-form solution.
pub fn example_1d_coupled(kappa: f64) -> ProblemSpec {
    ProblemSpec::new(
        "example1_coupled",
        1,
        1.0,
        vec![0.0],
        JumpMeasure::uniform(1.0).expect("valid measure"),
        Arc::new(Example1d {
            terminal_time: 1.0,
            kappa,
        }),
    )
    .expect("valid coupled problem")
}

pub fn example_highdim(d: usize) -> Result<ProblemSpec> {
    example_highdim_with(d, 1.0, 1.0, MarkMode::default())
}

pub fn example_highdim_with(d: usize, terminal_time: f64, delta: f64, mode: MarkMode) -> Result<ProblemSpec> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    ProblemSpec::new(
        "example_highdim",
        d,
        terminal_time,
        vec![0.0; d],
        JumpMeasure::uniform(delta)?,
        Arc::new(ExampleHighDim { d, terminal_time, mode }),
    )
}

/// Optional overrides applied to a named problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProblemOverrides {
    pub d: Option<usize>,
    pub terminal_time: Option<f64>,
    pub delta: Option<f64>,
    pub mark_mode: Option<MarkMode>,
    pub coupling: Option<f64>,
}

pub const PROBLEM_NAMES: [&str; 3] = ["example1", "example_highdim", "example1_coupled"];

pub fn by_name(name: &str, o: &ProblemOverrides) -> Result<ProblemSpec> {
    let t = o.terminal_time.unwrap_or(1.0);
    let delta = o.delta.unwrap_or(1.0);
    match name {
        "example1" => {
            if let Some(d) = o.d {
                if d != 1 {
                    return Err(Error::Config(format!("example1 has d = 1, got d = {d}")));
                }
            }
            example_1d_with(t, delta)
        }
        "example_highdim" => example_highdim_with(o.d.unwrap_or(100), t, delta, o.mark_mode.unwrap_or_default()),
        "example1_coupled" => {
            let kappa = o.coupling.unwrap_or(0.05);
            ProblemSpec::new(
                "example1_coupled",
                1,
                t,
                vec![0.0],
                JumpMeasure::uniform(delta)?,
                Arc::new(Example1d {
                    terminal_time: t,
                    kappa,
                }),
            )
        }
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// `du/dt + L u + f(t, x, u, sigma^T grad u, B[u])` at `(t, x)` with central
/// finite differences of step `fd_step` and quadrature for the nonlocal
/// terms.
pub fn pide_residual(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    u: &dyn Fn(f64, &[f64]) -> f64,
    fd_step: f64,
) -> Result<f64> {
    let d = spec.d;
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            context: "pide_residual",
            expected: d,
            got: x.len(),
        });
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    let h = fd_step;
    let u0 = u(t, x);
    let u_t = (u(t + h, x) - u(t - h, x)) / (2.0 * h);

    let mut xp = x.to_vec();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    for i in 0..d {
        xp[i] = x[i] + h;
        let up = u(t, &xp);
        xp[i] = x[i] - h;
        let um = u(t, &xp);
        xp[i] = x[i];
        grad[i] = (up - um) / (2.0 * h);
        hess[i * d + i] = (up - 2.0 * u0 + um) / (h * h);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = u(t, &xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }

    let c = &spec.coeffs;
    let xd = Dual::constants(x);
    let yd = Dual::constant(u0);
    let b: Vec<f64> = c.drift(t, &xd, &yd).iter().map(|v| v.value).collect();
    let s: Vec<f64> = c.diffusion(t, &xd, &yd).iter().map(|v| v.value).collect();

    // 0.5 Tr(sigma sigma^T H) = 0.5 sum_k (sigma^T H sigma)_kk
    let mut diffusion_term = 0.0;
    for k in 0..d {
        for i in 0..d {
            let sik = s[i * d + k];
            if sik == 0.0 {
                continue;
            }
            for j in 0..d {
                diffusion_term += 0.5 * sik * hess[i * d + j] * s[j * d + k];
            }
        }
    }
    let drift_term: f64 = b.iter().zip(&grad).map(|(a, g)| a * g).sum();

    let jump_at = |e: f64| -> (f64, f64) {
        let beta: Vec<f64> = c.jump(t, &xd, &yd, e).iter().map(|v| v.value).collect();
        let shifted: Vec<f64> = x.iter().zip(&beta).map(|(a, j)| a + j).collect();
        let du = u(t, &shifted) - u0;
        let slope: f64 = grad.iter().zip(&beta).map(|(g, j)| g * j).sum();
        (du, slope)
    };
    let nonlocal_l = levy_integral(
        |e| {
            let (du, slope) = jump_at(e);
            du - slope
        },
        &spec.measure,
    )?;
    let b_u = levy_integral(|e| jump_at(e).0 * spec.measure.gamma(e), &spec.measure)?;

    let gd = Dual::constants(&grad);
    let z: Vec<f64> = c
        .diffusion_transpose_times(t, &xd, &yd, &gd)
        .iter()
        .map(|v| v.value)
        .collect();
    let f = spec.driver_value(t, x, u0, &z, b_u);

    let r = u_t + diffusion_term + drift_term + nonlocal_l + f;
    if !r.is_finite() {
        return Err(Error::NonFinite(format!("pide residual at t = {t}")));
    }
    Ok(r)
}

/// Residual of the problem's own exact solution.
pub fn exact_residual(spec: &ProblemSpec, t: f64, x: &[f64], fd_step: f64) -> Result<f64> {
    spec.require_exact()?;
    let u = |s: f64, y: &[f64]| spec.exact_u(s, y).expect("exact solution present");
    pide_residual(spec, t, x, &u, fd_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_1d_exact_values() {
        let p = example_1d();
        assert_eq!(p.exact_u(0.0, &[0.0]), Some(2.0));
        for &x in &[-3.0, -0.2, 0.0, 1.7, 5.0] {
            let diff = p.exact_u(1.0, &[x]).unwrap() - p.terminal_value(&[x]);
            assert!(diff.abs() < 1e-10);
        }
    }

    #[test]
    fn example_1d_residual_vanishes() {
        let p = example_1d();
        let r = exact_residual(&p, 0.3, &[0.7], 1e-4).unwrap();
        assert!(r.abs() < 1e-4, "{r}");
    }

    #[test]
    fn wrong_constant_fails_residual() {
        let p = example_1d();
        let u = |t: f64, x: &[f64]| (x[0] + t).sin() + 2.5;
        let r = pide_residual(&p, 0.3, &[0.7], &u, 1e-4).unwrap();
        // The shift only changes the driver's zeroth- and first-order terms.
        let s = 1.0f64.sin();
        let c = 1.0f64.cos();
        let expected = (s + 0.5) * 0.5f64.exp() / 2.0 - s / 2.0 - 0.5 * c / (s + 2.0);
        assert!((r - expected).abs() < 1e-6, "{r} vs {expected}");
        assert!(r.abs() > 0.01);
    }

    #[test]
    fn driver_at_exact_quadruple_balances_linear_part() {
        // f = -(u_t + L u) at the exact solution.
        let p = example_1d();
        let (t, x) = (0.3, 0.7);
        let u = p.exact_u(t, &[x]).unwrap();
        let z = p.exact_z(t, &[x]).unwrap();
        let gamma = p.exact_gamma(t, &[x]).unwrap();
        let f = p.driver_value(t, &[x], u, &z, gamma);
        let s = (x + t).sin();
        let c = (x + t).cos();
        let jump_l = gamma; // int e de = 0 removes the gradient part
        let expected = -(c - 0.5 * s + jump_l);
        assert!((f - expected).abs() < 1e-12);
    }

    #[test]
    fn nonlocal_closed_form() {
        let p = example_1d();
        let k = 2.0 * (1.0f64.sin() - 1.0);
        for &(t, x) in &[(0.0, 0.0), (0.3, 0.7), (0.9, -2.1)] {
            let g = p.exact_gamma(t, &[x]).unwrap();
            assert!((g - k * (x + t).sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let coeffs = FnCoefficients::zero(2).with_constant_solution(1.25);
        let p = ProblemSpec::new(
            "zero",
            2,
            1.0,
            vec![0.0; 2],
            JumpMeasure::uniform(1.0).unwrap(),
            Arc::new(coeffs),
        )
        .unwrap();
        let u = |_t: f64, _x: &[f64]| 1.25;
        assert_eq!(pide_residual(&p, 0.5, &[0.1, 0.2], &u, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn highdim_reduces_to_1d() {
        let a = example_1d();
        let b = example_highdim(1).unwrap();
        for &(t, x) in &[(0.0, 0.0), (0.4, 1.3), (1.0, -0.6)] {
            assert_eq!(a.exact_u(t, &[x]), b.exact_u(t, &[x]));
            let fa = a.driver_value(t, &[x], 1.7, &[0.3], -0.2);
            let fb = b.driver_value(t, &[x], 1.7, &[0.3], -0.2);
            assert!((fa - fb).abs() < 1e-15);
        }
        assert_eq!(b.exact_u(0.0, &[0.0]), Some(2.0));
    }

    #[test]
    fn highdim_exact_properties() {
        let p = example_highdim(100).unwrap();
        assert_eq!(p.exact_u(0.0, &vec![0.0; 100]), Some(2.0));
        let x: Vec<f64> = (0..100).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.01).collect();
        let mut y = x.clone();
        y.reverse();
        y.swap(3, 71);
        let a = p.exact_u(0.4, &x).unwrap();
        let b = p.exact_u(0.4, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn highdim_residual_small() {
        let p = example_highdim(5).unwrap();
        let x = [0.1, -0.2, 0.05, 0.3, -0.1];
        let r = exact_residual(&p, 0.45, &x, 1e-4).unwrap();
        assert!(r.abs() < 1e-4, "{r}");
    }

    #[test]
    fn per_coordinate_mode_has_no_exact_solution() {
        let p = example_highdim_with(4, 1.0, 1.0, MarkMode::PerCoordinate).unwrap();
        assert!(!p.has_exact());
        assert!(matches!(p.require_exact(), Err(Error::MissingExactSolution(_))));
        assert_eq!(p.shifted(0.0, &[0.0; 4], 2.0, 0.5), vec![0.5; 4]);
        let q = example_highdim(4).unwrap();
        assert_eq!(q.shifted(0.0, &[0.0; 4], 2.0, 0.5), vec![0.125; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(example_highdim(0).is_err());
        assert!(matches!(
            by_name("nope", &ProblemOverrides::default()),
            Err(Error::UnknownProblem(_))
        ));
        let o = ProblemOverrides {
            d: Some(3),
            ..Default::default()
        };
        assert!(by_name("example1", &o).is_err());
        assert_eq!(by_name("example_highdim", &o).unwrap().d, 3);
    }

    #[test]
    fn coupled_variant_flags() {
        let p = example_1d_coupled(0.05);
        assert!(p.coupled());
        assert!(!p.has_exact());
        let x1 = p.forward_step(0.0, &[0.0], 2.0, 0.1, &[0.0], &[]);
        assert!((x1[0] - 0.01).abs() < 1e-15);
    }
}
