//! Command-line runner: configuration, subcommand dispatch and report files.
//!
//! Configuration is a TOML file of flat dotted keys, for example
//!
//! ```toml
//! seed = 7
//! output_dir = "out/example1"
//! problem.name = "example1"
//! grid.steps = 20
//! train.iterations = 4000
//! train.runs = 5
//! ```
//!
//! Unknown keys are rejected. Command-line flags override file values, and
//! `--set key=value` overrides any key. The resolved configuration is
//! written to `<output_dir>/config_resolved.toml`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{measure_errors, rate_study, RateMode, SolutionSource};
use crate::deep::{train_with, DriverMode, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::markovian::{
    condexp_quadrature_1d, run_markovian, solve_grid_1d, write_sweeps_csv, BasisKind, GridConfig, MarkovianConfig,
    RegressionBasis,
};
use crate::net::checkpoint;
use crate::net::optim::LrSchedule;
use crate::net::{
    gradient_check, Activation, MlpLayout, NetConfig, OptimizerConfig, OptimizerKind, Sharing, Tensor, Y0Init,
};
use crate::problem::{by_name, exact_residual, pide_residual, MarkMode, ProblemOverrides, ProblemSpec};
use crate::seed::derive;
use crate::stochastic::{levy_integral, make_noise};

pub const SEED_ENV: &str = "FBSDEJ_SEED";
pub const RESOLVED_CONFIG: &str = "config_resolved.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Train,
    Markovian,
    Rate,
    Verify,
    Errors,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Markovian => "markovian",
            Command::Rate => "rate",
            Command::Verify => "verify",
            Command::Errors => "errors",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub terminal_time: f64,
    pub delta: f64,
    pub mark_mode: MarkMode,
    /// Drift coefficient `kappa` of `example1_coupled`.
    pub coupling: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            name: "example1".into(),
            d: None,
            terminal_time: 1.0,
            delta: 1.0,
            mark_mode: MarkMode::Consistent,
            coupling: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { steps: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub checkpoint_every: usize,
    pub eval_samples: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `lr_decay_factor` every
    /// `lr_decay_every` iterations (0 disables).
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub activation: Activation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub sharing: Sharing,
    /// `"terminal"`, `"zero"` or a number.
    pub y0_init: String,
    pub output_gain: f64,
    pub driver: DriverMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let n = NetConfig::default();
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            runs: t.runs,
            checkpoint_every: t.checkpoint_every,
            eval_samples: t.eval_samples,
            optimizer: t.optimizer.kind,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            lr_decay_every: 0,
            lr_decay_factor: 1.0,
            activation: n.activation,
            hidden: None,
            sharing: n.sharing,
            y0_init: "terminal".into(),
            output_gain: n.output_gain,
            driver: t.driver,
            chunk: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovianSolver {
    Regression,
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovianSection {
    pub solver: MarkovianSolver,
    pub samples: usize,
    pub basis: BasisKind,
    /// Polynomial degree or knot count.
    pub basis_size: usize,
    pub clip_quantile: f64,
    pub ridge: f64,
    pub condition_limit: f64,
    pub max_sweeps: usize,
    pub tol: f64,
    pub eval_points: usize,
    pub grid_points: usize,
    pub grid_half_width: f64,
}

impl Default for MarkovianSection {
    fn default() -> Self {
        let m = MarkovianConfig::default();
        let g = GridConfig::default();
        Self {
            solver: MarkovianSolver::Regression,
            samples: m.samples,
            basis: m.basis.kind,
            basis_size: m.basis.size,
            clip_quantile: m.basis.clip_quantile,
            ridge: m.ridge,
            condition_limit: m.condition_limit,
            max_sweeps: m.max_sweeps,
            tol: m.tol,
            eval_points: m.eval_points,
            grid_points: g.points,
            grid_half_width: g.half_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub steps_list: Vec<usize>,
    pub samples: usize,
    pub mode: RateMode,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            steps_list: vec![10, 20, 40, 80],
            samples: 100_000,
            mode: RateMode::OraclePolicy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSourceKind {
    Oracle,
    Params,
    Markovian,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorsSection {
    pub source: ErrorSourceKind,
    /// Network checkpoint, for `source = "params"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    pub samples: usize,
}

impl Default for ErrorsSection {
    fn default() -> Self {
        Self {
            source: ErrorSourceKind::Oracle,
            params: None,
            samples: 10_000,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    pub threads: usize,
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub train: TrainSection,
    pub markovian: MarkovianSection,
    pub rate: RateSection,
    pub errors: ErrorsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 1,
            output_dir: PathBuf::from("out"),
            threads: 0,
            problem: ProblemSection::default(),
            grid: GridSection::default(),
            train: TrainSection::default(),
            markovian: MarkovianSection::default(),
            rate: RateSection::default(),
            errors: ErrorsSection::default(),
        }
    }
}

fn parse_y0_init(s: &str) -> Result<Y0Init> {
    match s {
        "terminal" => Ok(Y0Init::Terminal),
        "zero" => Ok(Y0Init::Zero),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Y0Init::Value)
            .ok_or_else(|| {
                Error::Config(format!(
                    "train.y0_init: expected terminal | zero | <number>, got `{other}`"
                ))
            }),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem_spec()?;
        if self.grid.steps == 0 {
            return Err(Error::Config("grid.steps must be >= 1".into()));
        }
        self.train_config()?
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        self.markovian_config().validate()?;
        if self.markovian.grid_points < 4 || !(self.markovian.grid_half_width > 0.0) {
            return Err(Error::Config(
                "markovian.grid_points must be >= 4 and grid_half_width > 0".into(),
            ));
        }
        let mut levels = self.rate.steps_list.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() < 3 || levels[0] == 0 {
            return Err(Error::Config(
                "rate.steps_list needs at least 3 distinct positive step counts".into(),
            ));
        }
        if self.rate.samples == 0 || self.errors.samples == 0 {
            return Err(Error::Config("rate.samples and errors.samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let o = ProblemOverrides {
            d: p.d,
            terminal_time: Some(p.terminal_time),
            delta: Some(p.delta),
            mark_mode: Some(p.mark_mode),
            coupling: Some(p.coupling),
        };
        by_name(&p.name, &o).map_err(|e| match e {
            Error::UnknownProblem(_) | Error::Config(_) => e,
            other => Error::Config(format!("problem: {other}")),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            steps: self.grid.steps,
            batch_size: t.batch_size,
            iterations: t.iterations,
            optimizer: OptimizerConfig {
                kind: t.optimizer,
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                schedule: LrSchedule {
                    every: t.lr_decay_every,
                    factor: t.lr_decay_factor,
                },
            },
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
            runs: t.runs,
            eval_samples: t.eval_samples,
            net: NetConfig {
                hidden: t.hidden.clone(),
                activation: t.activation,
                sharing: t.sharing,
                y0_init: parse_y0_init(&t.y0_init)?,
                output_gain: t.output_gain,
            },
            driver: t.driver,
            chunk: t.chunk,
        })
    }

    pub fn markovian_config(&self) -> MarkovianConfig {
        let m = &self.markovian;
        let mut basis = RegressionBasis::unfitted(m.basis, m.basis_size);
        basis.clip_quantile = m.clip_quantile;
        MarkovianConfig {
            samples: m.samples,
            basis,
            ridge: m.ridge,
            condition_limit: m.condition_limit,
            max_sweeps: m.max_sweeps,
            tol: m.tol,
            seed: self.seed,
            eval_points: m.eval_points,
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            half_width: self.markovian.grid_half_width,
            points: self.markovian.grid_points,
            max_sweeps: self.markovian.max_sweeps,
            tol: self.markovian.tol,
            eval_points: self.markovian.eval_points,
            ..GridConfig::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fbsdej",
    version,
    about = "Deep FBSDE solver for integro-differential equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Train the deep scheme and write checkpoints.csv.
    Train(TrainArgs),
    /// Run the Markovian iteration and write sweeps.csv.
    Markovian(MarkovianArgs),
    /// Time-discretization rate study; writes rate_report.csv.
    Rate(RateArgs),
    /// Built-in self-checks; writes verify.csv.
    Verify(CommonArgs),
    /// Error functional against the exact solution; writes error_report.csv.
    Errors(ErrorsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Defaults to $FBSDEJ_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "terminal-time")]
    pub terminal_time: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Time steps N.
    #[arg(long = "n")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override any key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MarkovianArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// regression | quadrature
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated step counts.
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// oracle | markovian_quadrature
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ErrorsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// oracle | params | markovian | grid
    #[arg(long)]
    pub source: Option<String>,
    /// Network checkpoint for `--source params`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
}

impl CliCommand {
    fn command(&self) -> Command {
        match self {
            CliCommand::Train(_) => Command::Train,
            CliCommand::Markovian(_) => Command::Markovian,
            CliCommand::Rate(_) => Command::Rate,
            CliCommand::Verify(_) => Command::Verify,
            CliCommand::Errors(_) => Command::Errors,
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            CliCommand::Train(a) => &a.common,
            CliCommand::Markovian(a) => &a.common,
            CliCommand::Rate(a) => &a.common,
            CliCommand::Verify(a) => a,
            CliCommand::Errors(a) => &a.common,
        }
    }

    /// Flag values as `(dotted key, value)` pairs.
    fn overrides(&self) -> Vec<(String, toml::Value)> {
        use toml::Value as V;
        let mut out: Vec<(String, V)> = Vec::new();
        let mut put = |k: &str, v: Option<V>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let c = self.common();
        let int = |v: Option<usize>| v.map(|x| V::Integer(x as i64));
        put(
            "output_dir",
            c.output_dir.as_ref().map(|p| V::String(p.display().to_string())),
        );
        put("seed", c.seed.map(|x| V::Integer(x as i64)));
        put("problem.name", c.problem.clone().map(V::String));
        put("problem.d", int(c.d));
        put("problem.terminal_time", c.terminal_time.map(V::Float));
        put("problem.delta", c.delta.map(V::Float));
        put("grid.steps", int(c.steps));
        put("threads", int(c.threads));
        match self {
            CliCommand::Train(a) => {
                put("train.iterations", int(a.iters));
                put("train.runs", int(a.runs));
                put("train.batch_size", int(a.batch));
                put("train.lr", a.lr.map(V::Float));
            }
            CliCommand::Markovian(a) => {
                put("markovian.solver", a.solver.clone().map(V::String));
                put("markovian.samples", int(a.samples));
                put("markovian.max_sweeps", int(a.max_sweeps));
            }
            CliCommand::Rate(a) => {
                put(
                    "rate.steps_list",
                    a.n_list
                        .as_ref()
                        .map(|l| V::Array(l.iter().map(|&n| V::Integer(n as i64)).collect())),
                );
                put(
                    "rate.mode",
                    a.mode.as_ref().map(|m| {
                        V::String(
                            RateMode::parse(m)
                                .map(|m| m.as_str().to_string())
                                .unwrap_or_else(|_| m.clone()),
                        )
                    }),
                );
                put("rate.samples", int(a.samples));
            }
            CliCommand::Errors(a) => {
                put("errors.source", a.source.clone().map(V::String));
                put(
                    "errors.params",
                    a.params.as_ref().map(|p| V::String(p.display().to_string())),
                );
                put("errors.samples", int(a.samples));
            }
            CliCommand::Verify(_) => {}
        }
        out
    }
}

/// Parses the right-hand side of `--set`: a TOML value, or a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Builds a [`RunConfig`] from an optional TOML document and overrides.
/// `env_seed` is used only when neither source sets `seed`.
pub fn resolve_config(
    file_text: Option<&str>,
    overrides: &[(String, toml::Value)],
    env_seed: Option<u64>,
) -> Result<RunConfig> {
    let mut table = match file_text {
        Some(text) => text
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_dotted(&mut table, k, v.clone())?;
    }
    if !table.contains_key("seed") {
        if let Some(s) = env_seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Reads the config file named by the flags and applies all overrides.
pub fn parse_config(cmd: &CliCommand) -> Result<RunConfig> {
    let common = cmd.common();
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = cmd.overrides();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        overrides.push((k.trim().to_string(), parse_value(v.trim())));
    }
    let mut cfg = resolve_config(text.as_deref(), &overrides, env_seed()?)?;
    let command = cmd.command();
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config(format!(
                "config was resolved for `{}` but `{}` was requested",
                c.as_str(),
                command.as_str()
            )));
        }
    }
    cfg.command = Some(command);
    Ok(cfg)
}

/// Files written by a run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write_resolved(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_toml()?)?;
    Ok(path)
}

/// Executes a resolved configuration.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let command = cfg.command.ok_or_else(|| Error::Config("no subcommand given".into()))?;
    let mut outcome = Outcome {
        files: vec![write_resolved(cfg)?],
        summary: String::new(),
    };
    let spec = cfg.problem_spec()?;
    let grid = TimeGrid::uniform(spec.terminal_time, cfg.grid.steps)?;
    let dir = &cfg.output_dir;
    match command {
        Command::Train => run_train(cfg, &spec, dir, &mut outcome)?,
        Command::Markovian => {
            let path = dir.join("sweeps.csv");
            let history = match cfg.markovian.solver {
                MarkovianSolver::Regression => run_markovian(&spec, &grid, &cfg.markovian_config())?.history,
                MarkovianSolver::Quadrature => solve_grid_1d(&spec, &grid, &cfg.grid_config())?.history,
            };
            write_sweeps_csv(&history, &path)?;
            outcome.files.push(path);
            if let Some(r) = history.last() {
                outcome.summary = format!(
                    "{} sweeps, last sup delta {:.3e}, u(0, xi) = {:.6}",
                    r.m, r.sup_delta, r.u_at_xi
                );
            }
        }
        Command::Rate => {
            let r = rate_study(&spec, &cfg.rate.steps_list, cfg.rate.samples, cfg.rate.mode, cfg.seed)?;
            let path = dir.join("rate_report.csv");
            r.write_csv(&path)?;
            outcome.files.push(path);
            outcome.summary = match r.fit {
                Some(f) => format!("slope {:.4} +- {:.4}, R^2 {:.5}", f.slope, f.slope_stderr, f.r_squared),
                None => "degenerate: errors do not vary or vanish".into(),
            };
        }
        Command::Errors => {
            let report = match cfg.errors.source {
                ErrorSourceKind::Oracle => measure_errors(
                    SolutionSource::Oracle {
                        driver: cfg.train.driver,
                    },
                    &spec,
                    &grid,
                    cfg.errors.samples,
                    cfg.seed,
                )?,
                ErrorSourceKind::Params => {
                    let path = cfg
                        .errors
                        .params
                        .as_ref()
                        .ok_or_else(|| Error::Config("errors.params is required for source = params".into()))?;
                    let (params, _) = checkpoint::load(path)?;
                    if params.layout.steps != grid.steps() || params.layout.d != spec.d {
                        return Err(Error::Config(format!(
                            "checkpoint has d = {}, N = {} but the config has d = {}, N = {}",
                            params.layout.d,
                            params.layout.steps,
                            spec.d,
                            grid.steps()
                        )));
                    }
                    measure_errors(
                        SolutionSource::Deep {
                            params: &params,
                            driver: cfg.train.driver,
                        },
                        &spec,
                        &grid,
                        cfg.errors.samples,
                        cfg.seed,
                    )?
                }
                ErrorSourceKind::Markovian => {
                    let st = run_markovian(&spec, &grid, &cfg.markovian_config())?;
                    measure_errors(
                        SolutionSource::Markovian(&st),
                        &spec,
                        &grid,
                        cfg.errors.samples,
                        cfg.seed,
                    )?
                }
                ErrorSourceKind::Grid => {
                    let sol = solve_grid_1d(&spec, &grid, &cfg.grid_config())?;
                    measure_errors(SolutionSource::Grid(&sol), &spec, &grid, cfg.errors.samples, cfg.seed)?
                }
            };
            let path = dir.join("error_report.csv");
            report.write_csv(&path)?;
            outcome.files.push(path);
            outcome.summary = format!(
                "total squared error {:.4e} (x {:.2e}, y {:.2e}, z {:.2e}, gamma {:.2e})",
                report.total(),
                report.x_sq.value,
                report.y_sq.value,
                report.z_sq.value,
                report.gamma_sq.value
            );
        }
        Command::Verify => {
            let checks = self_checks(&spec, cfg.seed)?;
            let path = dir.join("verify.csv");
            write_checks(&checks, &path)?;
            outcome.files.push(path);
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
            if !failed.is_empty() {
                return Err(Error::Verification(failed.join(", ")));
            }
            outcome.summary = format!("{} self-checks passed", checks.len());
        }
    }
    Ok(outcome)
}

fn write_loss_history(report: &TrainReport, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let runs = report.loss_history.len();
    let header: Vec<String> = (0..runs).map(|r| format!("loss_run{r}")).collect();
    writeln!(f, "iteration,{}", header.join(","))?;
    let len = report.loss_history.iter().map(|h| h.len()).min().unwrap_or(0);
    for i in 0..len {
        let row: Vec<String> = report.loss_history.iter().map(|h| format!("{:?}", h[i])).collect();
        writeln!(f, "{i},{}", row.join(","))?;
    }
    Ok(())
}

fn run_train(cfg: &RunConfig, spec: &ProblemSpec, dir: &Path, outcome: &mut Outcome) -> Result<()> {
    let tc = cfg.train_config()?;
    let csv = dir.join("checkpoints.csv");
    let report = match train_with(spec, &tc, |row| {
        log::info!(
            "iteration {}: loss {:.5}, y0 {:.5} +- {:.5}",
            row.iteration,
            row.loss_mean,
            row.y0_mean,
            row.y0_std
        )
    }) {
        Ok(r) => r,
        Err(Error::TrainingDiverged {
            run,
            iteration,
            source,
            last_good,
        }) => {
            if let Some(partial) = &last_good {
                partial.write_csv(&csv)?;
            }
            return Err(Error::TrainingDiverged {
                run,
                iteration,
                source,
                last_good,
            });
        }
        Err(e) => return Err(e),
    };
    report.write_csv(&csv)?;
    outcome.files.push(csv);
    let hist = dir.join("loss_history.csv");
    write_loss_history(&report, &hist)?;
    outcome.files.push(hist);
    for (r, p) in report.params.iter().enumerate() {
        let path = dir.join(format!("params_run{r}.txt"));
        checkpoint::save(&path, p, derive(cfg.seed, crate::seed::tags::RUN, r as u64))?;
        outcome.files.push(path);
    }
    if let Some(last) = report.last() {
        outcome.summary = format!(
            "iteration {}: loss {:.5}, y0 {:.5} +- {:.5}",
            last.iteration, last.loss_mean, last.y0_mean, last.y0_std
        );
    }
    Ok(())
}

/// One self-check row.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    /// `value < threshold` passes unless `above` is set.
    pub above: bool,
    pub pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            above: false,
            pass: value < threshold,
        }
    }

    fn above(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            above: true,
            pass: value > threshold,
        }
    }
}

fn write_checks(checks: &[Check], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "check,value,threshold,direction,pass")?;
    for c in checks {
        let dir = if c.above { "above" } else { "below" };
        writeln!(f, "{},{:e},{:e},{dir},{}", c.name, c.value, c.threshold, c.pass)?;
    }
    Ok(())
}

/// Quick deterministic checks of the numerical building blocks.
pub fn self_checks(spec: &ProblemSpec, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let m = &spec.measure;

    // quadrature is exact on polynomials up to degree 2q - 1 (uniform marks)
    let delta = m.delta();
    let uniform = (m.density(0.0) * 2.0 * delta - 1.0).abs() < 1e-12;
    if uniform {
        let lam = m.total_intensity();
        let mut worst: f64 = 0.0;
        for k in 0..2 * m.quad_order() {
            let got = levy_integral(|e| e.powi(k as i32), m)?;
            let want = if k % 2 == 0 {
                lam * delta.powi(k as i32) / (k as f64 + 1.0)
            } else {
                0.0
            };
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
        checks.push(Check::below("levy_polynomial_exactness", worst, 1e-12));
    }

    if spec.has_exact() {
        let mut worst: f64 = 0.0;
        let t_end = spec.terminal_time;
        for i in 0..10 {
            for j in 0..10 {
                let t = t_end * (0.05 + 0.9 * i as f64 / 9.0);
                let c = -1.0 + 2.0 * j as f64 / 9.0;
                let x: Vec<f64> = spec.xi.iter().map(|v| v + c).collect();
                worst = worst.max(exact_residual(spec, t, &x, 1e-4)?.abs());
            }
        }
        checks.push(Check::below("pide_residual_exact", worst, 1e-4));
    }

    if spec.name == "example1" && spec.coeffs.exact(0.0, &[crate::dual::Dual::constant(0.0)]).is_some() {
        let mut worst: f64 = 0.0;
        for &(t, x) in &[(0.3, 0.7), (0.0, 0.0), (0.9, -1.2), (0.5, 2.0)] {
            let got = spec.exact_gamma(t, &[x]).unwrap_or(f64::NAN);
            let want = delta_gamma_closed_form(delta, t, x);
            worst = worst.max((got - want).abs());
        }
        checks.push(Check::below("gamma_closed_form", worst, 1e-8));
        let wrong = |t: f64, x: &[f64]| (x[0] + t).sin() + 2.5;
        let r = pide_residual(spec, 0.3, &[0.7], &wrong, 1e-4)?;
        checks.push(Check::above("pide_residual_wrong_constant", r.abs(), 0.01));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 99, 0));
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let input = rng.random_range(1..5usize);
        let h1 = rng.random_range(2..8usize);
        let h2 = rng.random_range(2..8usize);
        let out = rng.random_range(1..4usize);
        let l = MlpLayout::new(input, &[h1, h2], out, Activation::Tanh, 0)?;
        let p: Vec<f64> = (0..l.end()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = rng.random_range(1..6usize);
        let x = Tensor::from_vec(
            rows,
            input,
            (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect(),
        );
        worst = worst.max(gradient_check(&l, &p, &x, 1e-4)?);
    }
    checks.push(Check::below("gradient_check", worst, 1e-5));

    // jump counts per interval: mean within 4 standard errors
    let g = TimeGrid::uniform(spec.terminal_time, 10)?;
    let noise = make_noise(&g, 1, 10_000, m, derive(seed, 99, 1))?;
    let cells = (noise.samples() * g.steps()) as f64;
    let rate = m.total_intensity() * g.dt(0);
    let mean = noise.total_jumps() as f64 / cells;
    let z = if rate > 0.0 {
        (mean - rate).abs() / (rate / cells).sqrt()
    } else {
        mean
    };
    checks.push(Check::below("poisson_count_zscore", z, 4.0));

    if spec.d == 1 {
        // tower property of the one-step quadrature expectation for a
        // state-independent step
        let dt = 0.05;
        let phi = |x: f64| x.cos() + 0.1 * x * x;
        let half = |x: f64| condexp_quadrature_1d(spec, &phi, 0.0, x, 0.0, dt).unwrap_or(f64::NAN);
        let two = condexp_quadrature_1d(spec, &half, 0.0, 0.3, 0.0, dt)?;
        let one = condexp_quadrature_1d(spec, &phi, 0.0, 0.3, 0.0, 2.0 * dt)?;
        if !spec.coupled() && spec.name == "example1" {
            checks.push(Check::below("quadrature_tower_property", (two - one).abs(), 1e-8));
        }
    }
    Ok(checks)
}

/// `int (sin(x + t + e) - sin(x + t)) de` over `[-delta, delta]`.
fn delta_gamma_closed_form(delta: f64, t: f64, x: f64) -> f64 {
    2.0 * (delta.sin() - delta) * (x + t).sin()
}

fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = Error::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", error_json(&err));
            return err.exit_code();
        }
    };
    let result = parse_config(&cli.command).and_then(|cfg| {
        if cfg.threads > 0 {
            // a second initialization in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
        }
        run(&cfg)
    });
    match result {
        Ok(o) => {
            if !o.summary.is_empty() {
                println!("{}", o.summary);
            }
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = resolve_config(Some(""), &[], None).unwrap();
        assert_eq!(c.grid.steps, 20);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.train.optimizer, OptimizerKind::Adam);
        assert_eq!(c.problem.terminal_time, 1.0);
        assert_eq!(c.seed, 1);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let text = "seed = 3\ngrid.steps = 40\ntrain.lr = 0.01\n";
        let c = resolve_config(Some(text), &[("train.lr".into(), toml::Value::Float(0.5))], Some(9)).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.steps, 40);
        assert_eq!(c.train.lr, 0.5);
        let resolved = c.to_toml().unwrap();
        assert!(resolved.contains("lr = 0.5"));
        // the echo resolves to the same config
        assert_eq!(resolve_config(Some(&resolved), &[], None).unwrap(), c);
    }

    #[test]
    fn env_seed_is_a_fallback() {
        assert_eq!(resolve_config(None, &[], Some(11)).unwrap().seed, 11);
        assert_eq!(resolve_config(Some("seed = 2"), &[], Some(11)).unwrap().seed, 2);
    }

    #[test]
    fn schema_errors_name_the_key() {
        let e = resolve_config(Some("train.lrr = 1.0"), &[], None).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("lrr")), "{e}");
        let e = resolve_config(Some("seed = 1\nseed = 2\n"), &[], None).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("seed")), "{e}");
        let e = resolve_config(Some("problem.name = \"nope\""), &[], None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = resolve_config(Some("train.y0_init = \"sometimes\""), &[], None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn set_values_parse_as_toml() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("[1, 2]"), toml::Value::Array(vec![1.into(), 2.into()]));
        assert_eq!(parse_value("relu"), toml::Value::String("relu".into()));
        assert_eq!(parse_value("\"tanh\""), toml::Value::String("tanh".into()));
    }

    #[test]
    fn self_checks_pass_on_benchmark() {
        let spec = crate::problem::example_1d();
        let checks = self_checks(&spec, 1).unwrap();
        assert!(checks.len() >= 7);
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }
}
