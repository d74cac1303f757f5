//! Fixtures shared by the criterion benches.

use gsjf_core::flow::{gen_synthetic_model_scaled, standard_normal};
use gsjf_core::{FlowModel, ModelConfig, Tensor3};

/// One dominant block followed by three easy ones.
pub const BENCH_SCALES: [f64; 4] = [0.1, 0.02, 0.02, 0.02];

pub fn model() -> FlowModel {
    gen_synthetic_model_scaled(7, &ModelConfig::default(), &BENCH_SCALES).expect("valid config")
}

pub fn noise(batch: usize, seq: usize) -> Tensor3 {
    standard_normal(3, batch, seq, ModelConfig::default().channels)
}

/// The first block's inverse and its noise-side input at length `seq`.
pub fn block_pair(model: &FlowModel, batch: usize, seq: usize) -> (Tensor3, Tensor3) {
    let x = model
        .inverse_serial(&noise(batch, seq))
        .expect("no overflow at bench scales");
    model.forward_pairs(&x).expect("forward").swap_remove(0)
}
