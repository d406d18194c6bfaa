//! Feedforward networks with a batched reverse-mode tape and first-order
//! optimizers.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::gradient_check;
pub use mlp::{mlp_forward, mlp_tape, mlp_tape_marked, MlpLayout};
pub use optim::{adam_step, AdamState, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{init_params, NetConfig, ParamLayout, ParamSet, Sharing, Y0Init};
pub use tape::{Activation, NodeId, Tape};
pub use tensor::Tensor;
