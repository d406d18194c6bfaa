//! The deep FBSDE scheme: Euler rollout of the forward-backward system
//! under a policy for `(Y_0, Z, U)`, the terminal loss
//! `E|Y_N - g(X_N)|^2`, and the training loop.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::net::{
    init_params, mlp_tape, mlp_tape_marked, NetConfig, NodeId, Optimizer, OptimizerConfig, ParamLayout, ParamSet, Tape,
    Tensor, Y0Init,
};
use crate::problem::{forward_step_dual, ProblemSpec};
use crate::seed::{derive, tags};
use crate::stochastic::{levy_integral, make_noise, JumpMeasure, NoiseBlock};

/// Where the driver is evaluated in the backward Euler step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverMode {
    /// `f(t_n, X_n, Y_n, Z_n, Gamma_n)`.
    #[default]
    Explicit,
    /// `f(t_n, X_n, Y_{n+1}, Z_n, Gamma_n)`, solved per path by Newton.
    Implicit,
}

impl DriverMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(DriverMode::Explicit),
            "implicit" => Ok(DriverMode::Implicit),
            other => Err(Error::Config(format!(
                "unknown driver mode `{other}` (expected explicit | implicit)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DriverMode::Explicit => "explicit",
            DriverMode::Implicit => "implicit",
        }
    }
}

/// Supplies `Y_0`, `Z_n` and the jump kernel `U_n(e)` during a rollout.
pub trait Policy: Sync {
    /// `rows x 1`.
    fn y0(&self, tape: &mut Tape<'_>, rows: usize) -> Result<NodeId>;
    /// `rows x d` at step `n`.
    fn z(&self, tape: &mut Tape<'_>, n: usize, t: f64, x: NodeId, y: NodeId) -> Result<NodeId>;
    /// Column with one row per `(owner, mark)` pair.
    fn kernel(
        &self,
        tape: &mut Tape<'_>,
        n: usize,
        t: f64,
        x: NodeId,
        y: NodeId,
        marks: Vec<f64>,
        owner: Vec<u32>,
    ) -> Result<NodeId>;
}

/// Policy given by the trainable networks.
pub struct NetPolicy<'a> {
    pub layout: &'a ParamLayout,
}

impl NetPolicy<'_> {
    fn net_input(&self, tape: &mut Tape<'_>, t: f64, x: NodeId, y: NodeId) -> Result<NodeId> {
        if self.layout.time_input() {
            let rows = tape.value(x).rows;
            let tc = tape.constant(Tensor::filled(rows, 1, t));
            tape.concat(&[x, y, tc])
        } else {
            tape.concat(&[x, y])
        }
    }
}

impl Policy for NetPolicy<'_> {
    fn y0(&self, tape: &mut Tape<'_>, rows: usize) -> Result<NodeId> {
        Ok(tape.param_scalar(crate::net::params::Y0_INDEX, rows))
    }

    fn z(&self, tape: &mut Tape<'_>, n: usize, t: f64, x: NodeId, y: NodeId) -> Result<NodeId> {
        let input = self.net_input(tape, t, x, y)?;
        mlp_tape(tape, self.layout.z_net(n), input)
    }

    fn kernel(
        &self,
        tape: &mut Tape<'_>,
        n: usize,
        t: f64,
        x: NodeId,
        y: NodeId,
        marks: Vec<f64>,
        owner: Vec<u32>,
    ) -> Result<NodeId> {
        let input = self.net_input(tape, t, x, y)?;
        mlp_tape_marked(tape, self.layout.u_net(n), input, marks, owner)
    }
}

/// Policy built from the closed-form solution:
/// `Y_0 = u(0, xi)`, `Z = sigma^T grad u`, `U(e) = u(t, x + beta) - u(t, x)`.
pub struct OraclePolicy<'a> {
    pub spec: &'a ProblemSpec,
}

impl<'a> OraclePolicy<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        spec.require_exact()?;
        Ok(Self { spec })
    }
}

impl Policy for OraclePolicy<'_> {
    fn y0(&self, tape: &mut Tape<'_>, rows: usize) -> Result<NodeId> {
        let u = self
            .spec
            .exact_u(0.0, &self.spec.xi)
            .ok_or_else(|| Error::MissingExactSolution(self.spec.name.clone()))?;
        Ok(tape.constant(Tensor::filled(rows, 1, u)))
    }

    fn z(&self, tape: &mut Tape<'_>, _n: usize, t: f64, x: NodeId, _y: NodeId) -> Result<NodeId> {
        let xv = tape.value(x).clone();
        let d = xv.cols;
        let mut out = Tensor::zeros(xv.rows, d);
        for r in 0..xv.rows {
            let z = self
                .spec
                .exact_z(t, xv.row(r))
                .ok_or_else(|| Error::MissingExactSolution(self.spec.name.clone()))?;
            out.row_mut(r).copy_from_slice(&z);
        }
        Ok(tape.constant(out))
    }

    fn kernel(
        &self,
        tape: &mut Tape<'_>,
        _n: usize,
        t: f64,
        x: NodeId,
        _y: NodeId,
        marks: Vec<f64>,
        owner: Vec<u32>,
    ) -> Result<NodeId> {
        let xv = tape.value(x).clone();
        let mut out = Vec::with_capacity(marks.len());
        for (&e, &s) in marks.iter().zip(&owner) {
            let v = self
                .spec
                .exact_kernel(t, xv.row(s as usize), e)
                .ok_or_else(|| Error::MissingExactSolution(self.spec.name.clone()))?;
            out.push(v);
        }
        Ok(tape.constant(Tensor::column(out)))
    }
}

/// `Gamma = int U(e) gamma(e) lambda(de)` by quadrature.
pub fn gamma_of(kernel: impl Fn(f64) -> f64, measure: &JumpMeasure) -> Result<f64> {
    levy_integral(|e| kernel(e) * measure.gamma(e), measure)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutOptions {
    pub driver: DriverMode,
    /// Samples per tape.
    pub chunk: usize,
}

impl RolloutOptions {
    pub fn for_dim(d: usize) -> Self {
        Self {
            driver: DriverMode::Explicit,
            chunk: default_chunk(d),
        }
    }
}

pub fn default_chunk(d: usize) -> usize {
    (16_384 / (d + 10)).clamp(16, 1024)
}

/// Simulated trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub samples: usize,
    pub steps: usize,
    pub d: usize,
    /// `[samples][steps + 1][d]`
    pub x: Vec<f64>,
    /// `[samples][steps + 1]`
    pub y: Vec<f64>,
    /// `[samples][steps][d]`
    pub z: Vec<f64>,
    /// `[samples][steps]`
    pub gamma: Vec<f64>,
    /// `g(X_N)` per sample.
    pub terminal: Vec<f64>,
}

impl PathBatch {
    fn empty(samples: usize, steps: usize, d: usize) -> Self {
        Self {
            samples,
            steps,
            d,
            x: vec![0.0; samples * (steps + 1) * d],
            y: vec![0.0; samples * (steps + 1)],
            z: vec![0.0; samples * steps * d],
            gamma: vec![0.0; samples * steps],
            terminal: vec![0.0; samples],
        }
    }

    pub fn x_at(&self, s: usize, n: usize) -> &[f64] {
        let a = (s * (self.steps + 1) + n) * self.d;
        &self.x[a..a + self.d]
    }

    pub fn y_at(&self, s: usize, n: usize) -> f64 {
        self.y[s * (self.steps + 1) + n]
    }

    pub fn z_at(&self, s: usize, n: usize) -> &[f64] {
        let a = (s * self.steps + n) * self.d;
        &self.z[a..a + self.d]
    }

    pub fn gamma_at(&self, s: usize, n: usize) -> f64 {
        self.gamma[s * self.steps + n]
    }

    /// `mean (Y_N - g(X_N))^2`.
    pub fn terminal_loss(&self) -> f64 {
        (0..self.samples)
            .map(|s| {
                let r = self.y_at(s, self.steps) - self.terminal[s];
                r * r
            })
            .sum::<f64>()
            / self.samples as f64
    }
}

struct ChunkOut {
    residual: NodeId,
    paths: Option<PathBatch>,
}

fn check_noise(spec: &ProblemSpec, grid: &TimeGrid, noise: &NoiseBlock) -> Result<()> {
    if noise.dim() != spec.d {
        return Err(Error::DimensionMismatch {
            context: "noise dimension",
            expected: spec.d,
            got: noise.dim(),
        });
    }
    if noise.grid() != grid {
        return Err(Error::InvalidArgument("noise was generated on a different grid".into()));
    }
    Ok(())
}

fn ensure_finite(t: &Tensor, step: usize, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("non-finite {what}"),
        })
    }
}

/// Records one chunk of paths `[s0, s1)` on `tape`.
#[allow(clippy::too_many_arguments)]
fn rollout_chunk(
    tape: &mut Tape<'_>,
    policy: &dyn Policy,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    s0: usize,
    s1: usize,
    opts: &RolloutOptions,
    record: bool,
) -> Result<ChunkOut> {
    let d = spec.d;
    let rows = s1 - s0;
    let steps = grid.steps();
    let coupled = spec.coupled();
    let measure = &spec.measure;
    let qn = measure.nodes();
    let qw = measure.weights();
    let gamma_w: Vec<f64> = measure.gamma_weights();

    let mut paths = record.then(|| PathBatch::empty(rows, steps, d));

    let mut x0 = Tensor::zeros(rows, d);
    for r in 0..rows {
        x0.row_mut(r).copy_from_slice(&spec.xi);
    }
    let mut x = tape.constant(x0);
    let mut y = policy.y0(tape, rows)?;

    for n in 0..steps {
        let t = grid.t(n);
        let dt = grid.dt(n);
        if let Some(p) = paths.as_mut() {
            let xv = tape.value(x);
            let yv = tape.value(y);
            for r in 0..rows {
                let a = (r * (steps + 1) + n) * d;
                p.x[a..a + d].copy_from_slice(xv.row(r));
                p.y[r * (steps + 1) + n] = yv.data[r];
            }
        }

        let z = policy.z(tape, n, t, x, y)?;
        ensure_finite(tape.value(z), n, "Z")?;

        let mut marks = Vec::with_capacity(rows * (qn.len() + 1));
        let mut owner = Vec::with_capacity(marks.capacity());
        let mut w_gamma = Vec::with_capacity(marks.capacity());
        let mut w_mart = Vec::with_capacity(marks.capacity());
        for r in 0..rows {
            for k in 0..qn.len() {
                marks.push(qn[k]);
                owner.push(r as u32);
                w_gamma.push(gamma_w[k]);
                w_mart.push(-dt * qw[k]);
            }
            for &e in noise.jumps(s0 + r, n) {
                marks.push(e);
                owner.push(r as u32);
                w_gamma.push(0.0);
                w_mart.push(1.0);
            }
        }
        let owner2 = owner.clone();
        let u = policy.kernel(tape, n, t, x, y, marks, owner)?;
        ensure_finite(tape.value(u), n, "jump kernel")?;
        let gamma = tape.group_sum(u, rows, owner2.clone(), w_gamma)?;
        let mart = tape.group_sum(u, rows, owner2, w_mart)?;

        let mut dw = Tensor::zeros(rows, d);
        for r in 0..rows {
            dw.row_mut(r).copy_from_slice(noise.dw(s0 + r, n));
        }
        let dw = tape.constant(dw);
        let zdw = tape.row_dot(z, dw)?;

        if let Some(p) = paths.as_mut() {
            let zv = tape.value(z);
            let gv = tape.value(gamma);
            for r in 0..rows {
                let a = (r * steps + n) * d;
                p.z[a..a + d].copy_from_slice(zv.row(r));
                p.gamma[r * steps + n] = gv.data[r];
            }
        }

        let y_next = match opts.driver {
            DriverMode::Explicit => {
                let f = driver_node(tape, spec, t, x, y, z, gamma, coupled)?;
                tape.combine(&[(y, 1.0), (f, -dt), (zdw, 1.0), (mart, 1.0)])?
            }
            DriverMode::Implicit => {
                let a = tape.combine(&[(y, 1.0), (zdw, 1.0), (mart, 1.0)])?;
                implicit_node(tape, spec, t, dt, x, a, z, gamma, coupled, n)?
            }
        };
        ensure_finite(tape.value(y_next), n, "Y")?;

        let x_next = forward_node(tape, spec, t, dt, x, y, noise, s0, n, coupled)?;
        ensure_finite(tape.value(x_next), n, "X")?;
        x = x_next;
        y = y_next;
    }

    let g = terminal_node(tape, spec, x, coupled)?;
    if let Some(p) = paths.as_mut() {
        let xv = tape.value(x);
        let yv = tape.value(y);
        let gv = tape.value(g);
        for r in 0..rows {
            let a = (r * (steps + 1) + steps) * d;
            p.x[a..a + d].copy_from_slice(xv.row(r));
            p.y[r * (steps + 1) + steps] = yv.data[r];
            p.terminal[r] = gv.data[r];
        }
    }
    let residual = tape.sub(y, g)?;
    Ok(ChunkOut { residual, paths })
}

/// Driver values with the Jacobian w.r.t. `[x (coupled only), y, z, gamma]`.
#[allow(clippy::too_many_arguments)]
fn driver_node(
    tape: &mut Tape<'_>,
    spec: &ProblemSpec,
    t: f64,
    x: NodeId,
    y: NodeId,
    z: NodeId,
    gamma: NodeId,
    coupled: bool,
) -> Result<NodeId> {
    let d = spec.d;
    let inputs: Vec<NodeId> = if coupled {
        vec![x, y, z, gamma]
    } else {
        vec![y, z, gamma]
    };
    let live = inputs.iter().any(|&i| tape.is_live(i));
    let xo = if coupled { d } else { 0 };
    let nv = xo + d + 2;
    let (xv, yv, zv, gv) = (
        tape.value(x).clone(),
        tape.value(y).clone(),
        tape.value(z).clone(),
        tape.value(gamma).clone(),
    );
    let rows = yv.rows;
    let mut val = Vec::with_capacity(rows);
    let mut jac = if live { vec![0.0; rows * nv] } else { Vec::new() };
    for r in 0..rows {
        let f = if live {
            let xd = if coupled {
                Dual::variables(xv.row(r), 0, nv)
            } else {
                Dual::constants(xv.row(r))
            };
            let yd = Dual::variable(yv.data[r], xo, nv);
            let zd = Dual::variables(zv.row(r), xo + 1, nv);
            let gd = Dual::variable(gv.data[r], xo + 1 + d, nv);
            let f = spec.coeffs.driver(t, &xd, &yd, &zd, &gd);
            if !f.grad.is_empty() {
                jac[r * nv..(r + 1) * nv].copy_from_slice(&f.grad);
            }
            f.value
        } else {
            spec.driver_value(t, xv.row(r), yv.data[r], zv.row(r), gv.data[r])
        };
        val.push(f);
    }
    let value = Tensor::column(val);
    if live {
        tape.local(&inputs, value, jac)
    } else {
        Ok(tape.constant(value))
    }
}

/// Solves `y' = a - dt f(t, x, y', z, gamma)` per row; the Jacobian follows
/// from the implicit function theorem.
#[allow(clippy::too_many_arguments)]
fn implicit_node(
    tape: &mut Tape<'_>,
    spec: &ProblemSpec,
    t: f64,
    dt: f64,
    x: NodeId,
    a: NodeId,
    z: NodeId,
    gamma: NodeId,
    coupled: bool,
    step: usize,
) -> Result<NodeId> {
    let d = spec.d;
    let inputs: Vec<NodeId> = if coupled {
        vec![x, a, z, gamma]
    } else {
        vec![a, z, gamma]
    };
    let live = inputs.iter().any(|&i| tape.is_live(i));
    let xo = if coupled { d } else { 0 };
    let nv = xo + d + 2;
    let (xv, av, zv, gv) = (
        tape.value(x).clone(),
        tape.value(a).clone(),
        tape.value(z).clone(),
        tape.value(gamma).clone(),
    );
    let rows = av.rows;
    let mut val = Vec::with_capacity(rows);
    let mut jac = if live { vec![0.0; rows * nv] } else { Vec::new() };
    for r in 0..rows {
        let ar = av.data[r];
        let mut yk = ar;
        let mut converged = false;
        for _ in 0..50 {
            let xd = Dual::constants(xv.row(r));
            let yd = Dual::variable(yk, 0, 1);
            let f = spec
                .coeffs
                .driver(t, &xd, &yd, &Dual::constants(zv.row(r)), &Dual::constant(gv.data[r]));
            let res = yk - ar + dt * f.value;
            let dres = 1.0 + dt * f.partial(0);
            let step_y = res / dres;
            yk -= step_y;
            if !yk.is_finite() {
                break;
            }
            if step_y.abs() <= 1e-14 * (1.0 + yk.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Divergence {
                step,
                detail: format!("implicit driver solve failed on path {r}"),
            });
        }
        if live {
            let xd = if coupled {
                Dual::variables(xv.row(r), 0, nv)
            } else {
                Dual::constants(xv.row(r))
            };
            // y' enters f through the a-slot seed
            let yd = Dual::variable(yk, xo, nv);
            let zd = Dual::variables(zv.row(r), xo + 1, nv);
            let gd = Dual::variable(gv.data[r], xo + 1 + d, nv);
            let f = spec.coeffs.driver(t, &xd, &yd, &zd, &gd);
            let fy = f.partial(xo);
            let denom = 1.0 + dt * fy;
            let row = &mut jac[r * nv..(r + 1) * nv];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = if c == xo {
                    1.0 / denom
                } else {
                    -dt * f.partial(c) / denom
                };
            }
        }
        val.push(yk);
    }
    let value = Tensor::column(val);
    if live {
        tape.local(&inputs, value, jac)
    } else {
        Ok(tape.constant(value))
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_node(
    tape: &mut Tape<'_>,
    spec: &ProblemSpec,
    t: f64,
    dt: f64,
    x: NodeId,
    y: NodeId,
    noise: &NoiseBlock,
    s0: usize,
    n: usize,
    coupled: bool,
) -> Result<NodeId> {
    let d = spec.d;
    let xv = tape.value(x).clone();
    let yv = tape.value(y).clone();
    let rows = xv.rows;
    let mut out = Tensor::zeros(rows, d);
    let live = coupled && (tape.is_live(x) || tape.is_live(y));
    if !live {
        for r in 0..rows {
            let next = spec.forward_step(
                t,
                xv.row(r),
                yv.data[r],
                dt,
                noise.dw(s0 + r, n),
                noise.jumps(s0 + r, n),
            );
            out.row_mut(r).copy_from_slice(&next);
        }
        return Ok(tape.constant(out));
    }
    let nv = d + 1;
    let mut jac = vec![0.0; rows * d * nv];
    for r in 0..rows {
        let xd = Dual::variables(xv.row(r), 0, nv);
        let yd = Dual::variable(yv.data[r], d, nv);
        let next = forward_step_dual(spec, t, &xd, &yd, dt, noise.dw(s0 + r, n), noise.jumps(s0 + r, n));
        for (i, v) in next.iter().enumerate() {
            out.data[r * d + i] = v.value;
            for c in 0..nv {
                jac[(r * d + i) * nv + c] = v.partial(c);
            }
        }
    }
    tape.local(&[x, y], out, jac)
}

fn terminal_node(tape: &mut Tape<'_>, spec: &ProblemSpec, x: NodeId, coupled: bool) -> Result<NodeId> {
    let d = spec.d;
    let xv = tape.value(x).clone();
    let live = coupled && tape.is_live(x);
    let mut val = Vec::with_capacity(xv.rows);
    let mut jac = if live { vec![0.0; xv.rows * d] } else { Vec::new() };
    for r in 0..xv.rows {
        if live {
            let g = spec.coeffs.terminal(&Dual::variables(xv.row(r), 0, d));
            for c in 0..d {
                jac[r * d + c] = g.partial(c);
            }
            val.push(g.value);
        } else {
            val.push(spec.terminal_value(xv.row(r)));
        }
    }
    let value = Tensor::column(val);
    if live {
        tape.local(&[x], value, jac)
    } else {
        Ok(tape.constant(value))
    }
}

fn chunks(samples: usize, chunk: usize) -> Vec<(usize, usize)> {
    let c = chunk.max(1);
    (0..samples.div_ceil(c))
        .map(|i| (i * c, ((i + 1) * c).min(samples)))
        .collect()
}

/// Forward-backward rollout of all paths in `noise` under `policy`.
pub fn rollout(
    policy: &dyn Policy,
    params: &[f64],
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    opts: &RolloutOptions,
) -> Result<PathBatch> {
    check_noise(spec, grid, noise)?;
    let parts = chunks(noise.samples(), opts.chunk)
        .into_par_iter()
        .map(|(s0, s1)| {
            let mut tape = Tape::new(params);
            let out = rollout_chunk(&mut tape, policy, spec, grid, noise, s0, s1, opts, true)?;
            Ok(out.paths.expect("recorded"))
        })
        .collect::<Result<Vec<PathBatch>>>()?;
    let mut all = PathBatch::empty(0, grid.steps(), spec.d);
    for p in parts {
        all.samples += p.samples;
        all.x.extend(p.x);
        all.y.extend(p.y);
        all.z.extend(p.z);
        all.gamma.extend(p.gamma);
        all.terminal.extend(p.terminal);
    }
    Ok(all)
}

/// `mean (Y_N - g(X_N))^2` under the network policy.
pub fn terminal_loss(
    params: &ParamSet,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    opts: &RolloutOptions,
) -> Result<f64> {
    let policy = NetPolicy { layout: &params.layout };
    Ok(rollout(&policy, &params.values, spec, grid, noise, opts)?.terminal_loss())
}

/// Terminal loss and its gradient w.r.t. all parameters. Chunk gradients
/// are summed in chunk order, so the result does not depend on the number
/// of worker threads.
pub fn loss_and_grad(
    params: &ParamSet,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    opts: &RolloutOptions,
) -> Result<(f64, Vec<f64>)> {
    check_noise(spec, grid, noise)?;
    let samples = noise.samples();
    let scale = 1.0 / samples as f64;
    let policy = NetPolicy { layout: &params.layout };
    let parts = chunks(samples, opts.chunk)
        .into_par_iter()
        .map(|(s0, s1)| {
            let mut tape = Tape::new(&params.values);
            let out = rollout_chunk(&mut tape, &policy, spec, grid, noise, s0, s1, opts, false)?;
            let loss = tape.sum_squares(out.residual, scale);
            let mut g = vec![0.0; params.len()];
            tape.backward(loss, &mut g)?;
            Ok((tape.value(loss).data[0], g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub runs: usize,
    /// Fresh samples used to evaluate the loss at checkpoints.
    pub eval_samples: usize,
    pub net: NetConfig,
    pub driver: DriverMode,
    pub chunk: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            batch_size: 256,
            iterations: 4000,
            optimizer: OptimizerConfig::default(),
            seed: 1,
            checkpoint_every: 500,
            runs: 1,
            eval_samples: 256,
            net: NetConfig::default(),
            driver: DriverMode::Explicit,
            chunk: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument("checkpoint_every must be >= 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::InvalidArgument("eval_samples must be >= 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn rollout_options(&self, d: usize) -> RolloutOptions {
        RolloutOptions {
            driver: self.driver,
            chunk: self.chunk.unwrap_or_else(|| default_chunk(d)),
        }
    }
}

/// Metrics at one checkpoint, aggregated over runs.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRow {
    pub iteration: usize,
    pub loss_mean: f64,
    pub y0_mean: f64,
    pub y0_std: f64,
    pub wall_seconds: f64,
    /// Evaluation loss of each run.
    pub losses: Vec<f64>,
    /// `y0` of each run.
    pub y0s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub checkpoints: Vec<CheckpointRow>,
    /// Minibatch loss before each update, per run.
    pub loss_history: Vec<Vec<f64>>,
    pub params: Vec<ParamSet>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&CheckpointRow> {
        self.checkpoints.last()
    }

    /// Minibatch loss averaged over runs and over the trailing `window`
    /// iterations ending at `iteration`.
    pub fn smoothed_loss(&self, iteration: usize, window: usize) -> Option<f64> {
        let len = self.loss_history.iter().map(|h| h.len()).min()?;
        if iteration >= len || window == 0 {
            return None;
        }
        let lo = (iteration + 1).saturating_sub(window);
        let mut acc = 0.0;
        for h in &self.loss_history {
            acc += h[lo..=iteration].iter().sum::<f64>() / (iteration + 1 - lo) as f64;
        }
        Some(acc / self.loss_history.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "iteration,loss_mean,y0_mean,y0_std,wall_seconds")?;
        for c in &self.checkpoints {
            writeln!(
                f,
                "{},{:?},{:?},{:?},{:.3}",
                c.iteration, c.loss_mean, c.y0_mean, c.y0_std, c.wall_seconds
            )?;
        }
        Ok(())
    }
}

/// Sample mean and standard deviation (divisor `n - 1`; 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Network initialization with `y0` resolved against the problem.
pub fn init_for_problem(spec: &ProblemSpec, cfg: &NetConfig, steps: usize, seed: u64) -> Result<ParamSet> {
    let mut p = init_params(cfg, spec.d, steps, seed)?;
    if cfg.y0_init == Y0Init::Terminal {
        p.set_y0(spec.terminal_value(&spec.xi));
    }
    Ok(p)
}

/// Trains `config.runs` independent networks. A fresh noise minibatch is
/// drawn at every iteration; checkpoint losses use a fixed held-out batch
/// per run.
pub fn train(spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainReport> {
    train_with(spec, config, |_| {})
}

/// As [`train`], calling `on_checkpoint` after each checkpoint row.
pub fn train_with(
    spec: &ProblemSpec,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&CheckpointRow),
) -> Result<TrainReport> {
    config.validate()?;
    let grid = TimeGrid::uniform(spec.terminal_time, config.steps)?;
    let opts = config.rollout_options(spec.d);
    let start = Instant::now();

    let mut checkpoints_at: Vec<usize> = (0..=config.iterations).step_by(config.checkpoint_every).collect();
    if *checkpoints_at.last().unwrap() != config.iterations {
        checkpoints_at.push(config.iterations);
    }

    let mut params: Vec<ParamSet> = Vec::with_capacity(config.runs);
    let mut optims = Vec::with_capacity(config.runs);
    let mut evals = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let run_seed = derive(config.seed, tags::RUN, r as u64);
        let p = init_for_problem(spec, &config.net, config.steps, derive(run_seed, tags::INIT, 0))?;
        optims.push(Optimizer::new(config.optimizer, p.len()));
        params.push(p);
        evals.push(make_noise(
            &grid,
            spec.d,
            config.eval_samples,
            &spec.measure,
            derive(run_seed, tags::EVAL_BATCH, 0),
        )?);
    }

    let mut report = TrainReport {
        checkpoints: Vec::new(),
        loss_history: vec![Vec::with_capacity(config.iterations); config.runs],
        params: Vec::new(),
    };

    let evaluate = |params: &[ParamSet], iteration: usize, report: &TrainReport| -> Result<CheckpointRow> {
        let mut losses = Vec::with_capacity(params.len());
        for (r, p) in params.iter().enumerate() {
            let l = terminal_loss(p, spec, &grid, &evals[r], &opts).map_err(|e| Error::TrainingDiverged {
                run: r,
                iteration,
                source: Box::new(e),
                last_good: Some(Box::new(report.clone())),
            })?;
            losses.push(l);
        }
        let y0s: Vec<f64> = params.iter().map(|p| p.y0()).collect();
        let (y0_mean, y0_std) = mean_std(&y0s);
        Ok(CheckpointRow {
            iteration,
            loss_mean: losses.iter().sum::<f64>() / losses.len() as f64,
            y0_mean,
            y0_std,
            wall_seconds: start.elapsed().as_secs_f64(),
            losses,
            y0s,
        })
    };

    let mut next_cp = 0;
    for it in 0..=config.iterations {
        if next_cp < checkpoints_at.len() && checkpoints_at[next_cp] == it {
            let row = evaluate(&params, it, &report)?;
            log::info!(
                "iteration {it}: loss {:.5} y0 {:.5} +- {:.5}",
                row.loss_mean,
                row.y0_mean,
                row.y0_std
            );
            on_checkpoint(&row);
            report.checkpoints.push(row);
            next_cp += 1;
        }
        if it == config.iterations {
            break;
        }
        for r in 0..config.runs {
            let run_seed = derive(config.seed, tags::RUN, r as u64);
            let noise = make_noise(
                &grid,
                spec.d,
                config.batch_size,
                &spec.measure,
                derive(run_seed, tags::TRAIN_BATCH, it as u64),
            )?;
            let diverged = |e: Error, report: &TrainReport| Error::TrainingDiverged {
                run: r,
                iteration: it,
                source: Box::new(e),
                last_good: Some(Box::new(report.clone())),
            };
            let (loss, grad) = match loss_and_grad(&params[r], spec, &grid, &noise, &opts) {
                Ok(v) => v,
                Err(e) => return Err(diverged(e, &report)),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(
                    Error::NonFinite(format!("loss {loss} or its gradient")),
                    &report,
                ));
            }
            report.loss_history[r].push(loss);
            optims[r].step(&mut params[r].values, &grad)?;
        }
    }
    report.params = params;
    Ok(report)
}
