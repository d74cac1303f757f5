//! Toy autoregressive affine flow: causal attention produces per-position
//! log-scale `s` and shift `u`, and each block maps `x` to `z` with
//! `z_t = exp(-s(x_{<t})) * (x_t - u(x_{<t}))`.
//!
//! The forward direction is one parallel pass. The exact inverse has to walk
//! the sequence one position at a time; [`FlowBlock::inverse_serial`] does so
//! against an incremental key/value cache and serves as the ground truth the
//! parallel samplers are checked against.

mod attention;
mod block;
pub mod io;
mod model;
pub mod synthetic;

pub use attention::AttentionLayer;
pub use block::{BlockState, FlowBlock, SerialStats};
pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use model::{orient, FlowModel, ModelConfig};
pub use synthetic::{
    default_weight_scale, gen_synthetic_model, gen_synthetic_model_scaled, standard_normal,
};

pub(crate) use block::sigma;
