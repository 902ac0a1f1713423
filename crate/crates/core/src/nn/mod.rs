//! Differentiable numeric kernel shared by every learned component.

mod gradcheck;
mod graph;
mod layers;
mod matrix;
mod optim;
mod params;

pub use gradcheck::finite_diff_check;
pub use graph::{value_and_grad, Backward, Graph, Var};
pub use layers::{
    causal_mask, linear_forward, mlp_forward, scaled_dot_attention, softmax, Attention, Linear,
    Mlp,
};
pub use matrix::Matrix;
pub use optim::{adamw_step, cosine_lr, ema_update, AdamWConfig, OptimizerState};
pub use params::{Gradients, ParamId, ParamSet};

/// Default seed for every seeded component.
pub const DEFAULT_SEED: u64 = 42;
