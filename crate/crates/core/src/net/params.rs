//! The trainable parameter vector: the scalar initial value `y0` followed
//! by the gradient networks and the jump-kernel networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::net::mlp::MlpLayout;
use crate::net::tape::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One gradient net and one kernel net per time step.
    PerStep,
    /// A single pair of nets taking `t` as an extra input.
    Shared,
}

impl Sharing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_step" => Ok(Sharing::PerStep),
            "shared" => Ok(Sharing::Shared),
            other => Err(Error::Config(format!(
                "unknown net sharing `{other}` (expected per_step | shared)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sharing::PerStep => "per_step",
            Sharing::Shared => "shared",
        }
    }
}

/// Initial value of the `y0` head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Y0Init {
    /// `g(xi)`, resolved by the solver.
    Terminal,
    Zero,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Hidden widths; `None` means two layers of width `d + 10`.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub sharing: Sharing,
    pub y0_init: Y0Init,
    /// Standard-deviation multiplier of the affine output layer.
    pub output_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            activation: Activation::Relu,
            sharing: Sharing::PerStep,
            y0_init: Y0Init::Terminal,
            output_gain: 0.1,
        }
    }
}

impl NetConfig {
    pub fn hidden_for(&self, d: usize) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![d + 10, d + 10])
    }
}

/// Where each network lives in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub d: usize,
    pub steps: usize,
    pub sharing: Sharing,
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub z_nets: Vec<MlpLayout>,
    pub u_nets: Vec<MlpLayout>,
    pub total: usize,
}

/// Position of one scalar inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamLocation {
    Y0,
    Weight {
        net: NetKind,
        step: usize,
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        net: NetKind,
        step: usize,
        layer: usize,
        index: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Z,
    U,
}

pub const Y0_INDEX: usize = 0;

impl ParamLayout {
    pub fn new(d: usize, steps: usize, cfg: &NetConfig) -> Result<Self> {
        if d == 0 || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "parameter layout needs d >= 1 and steps >= 1 (got d = {d}, steps = {steps})"
            )));
        }
        let hidden = cfg.hidden_for(d);
        let time_input = usize::from(cfg.sharing == Sharing::Shared);
        let count = match cfg.sharing {
            Sharing::PerStep => steps,
            Sharing::Shared => 1,
        };
        let mut offset = 1;
        let mut z_nets = Vec::with_capacity(count);
        let mut u_nets = Vec::with_capacity(count);
        for _ in 0..count {
            let z = MlpLayout::new(d + 1 + time_input, &hidden, d, cfg.activation, offset)?;
            offset = z.end();
            let u = MlpLayout::new(d + 2 + time_input, &hidden, 1, cfg.activation, offset)?;
            offset = u.end();
            z_nets.push(z);
            u_nets.push(u);
        }
        Ok(Self {
            d,
            steps,
            sharing: cfg.sharing,
            activation: cfg.activation,
            hidden,
            z_nets,
            u_nets,
            total: offset,
        })
    }

    pub fn z_net(&self, step: usize) -> &MlpLayout {
        &self.z_nets[step.min(self.z_nets.len() - 1)]
    }

    pub fn u_net(&self, step: usize) -> &MlpLayout {
        &self.u_nets[step.min(self.u_nets.len() - 1)]
    }

    pub fn time_input(&self) -> bool {
        self.sharing == Sharing::Shared
    }

    /// Flat index range of one network.
    pub fn block(&self, net: NetKind, step: usize) -> std::ops::Range<usize> {
        let l = match net {
            NetKind::Z => self.z_net(step),
            NetKind::U => self.u_net(step),
        };
        l.offset..l.end()
    }

    pub fn locate(&self, index: usize) -> Option<ParamLocation> {
        if index == Y0_INDEX {
            return Some(ParamLocation::Y0);
        }
        if index >= self.total {
            return None;
        }
        for (step, (z, u)) in self.z_nets.iter().zip(&self.u_nets).enumerate() {
            for (net, l) in [(NetKind::Z, z), (NetKind::U, u)] {
                if index < l.offset || index >= l.end() {
                    continue;
                }
                for layer in 0..l.layers() {
                    let w = l.weight_offset(layer);
                    let b = l.bias_offset(layer);
                    let n_in = l.dims[layer];
                    if index >= w && index < b {
                        let k = index - w;
                        return Some(ParamLocation::Weight {
                            net,
                            step,
                            layer,
                            row: k / n_in,
                            col: k % n_in,
                        });
                    }
                    if index >= b && index < b + l.dims[layer + 1] {
                        return Some(ParamLocation::Bias {
                            net,
                            step,
                            layer,
                            index: index - b,
                        });
                    }
                }
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn y0(&self) -> f64 {
        self.values[Y0_INDEX]
    }

    pub fn set_y0(&mut self, v: f64) {
        self.values[Y0_INDEX] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Random initialization: He-normal weights (`var = 2 / fan_in`) for relu
/// hidden layers, `var = 1 / fan_in` for tanh hidden layers,
/// `std = output_gain / sqrt(fan_in)` for the affine output layer, zero
/// biases. `Y0Init::Terminal` leaves `y0 = 0` for
/// the caller to fill in.
pub fn init_params(cfg: &NetConfig, d: usize, steps: usize, seed: u64) -> Result<ParamSet> {
    let layout = ParamLayout::new(d, steps, cfg)?;
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in layout.z_nets.iter().chain(&layout.u_nets) {
        for layer in 0..l.layers() {
            let fan_in = l.dims[layer] as f64;
            let hidden = layer + 1 < l.layers();
            let std = if !hidden {
                cfg.output_gain / fan_in.sqrt()
            } else if cfg.activation == Activation::Relu {
                (2.0 / fan_in).sqrt()
            } else {
                (1.0 / fan_in).sqrt()
            };
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("init std: {e}")))?;
            let w = l.weight_offset(layer);
            for v in &mut values[w..l.bias_offset(layer)] {
                *v = normal.sample(&mut rng);
            }
        }
    }
    values[Y0_INDEX] = match cfg.y0_init {
        Y0Init::Value(v) => v,
        Y0Init::Zero | Y0Init::Terminal => 0.0,
    };
    Ok(ParamSet { layout, values })
}
