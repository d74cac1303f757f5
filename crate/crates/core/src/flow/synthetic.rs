//! Seeded toy models and noise batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::attention::AttentionLayer;
use super::block::FlowBlock;
use super::model::{FlowModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// Default project-out scale: `0.02 / sqrt(depth)`.
pub fn default_weight_scale(depth: usize) -> f64 {
    0.02 / (depth.max(1) as f64).sqrt()
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        std * rng.sample::<f64, _>(StandardNormal)
    })
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, mean: f64, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| mean + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn gen_layer(rng: &mut ChaCha8Rng, c: usize, h: usize) -> AttentionLayer {
    let inv_c = 1.0 / (c as f64).sqrt();
    AttentionLayer {
        wq: normal_matrix(rng, c, c, inv_c),
        wk: normal_matrix(rng, c, c, inv_c),
        wv: normal_matrix(rng, c, c, inv_c),
        wo: normal_matrix(rng, c, c, inv_c),
        mlp_w1: normal_matrix(rng, c, h, inv_c),
        mlp_w2: normal_matrix(rng, h, c, 1.0 / (h as f64).sqrt()),
        ln1_gain: normal_vec(rng, c, 1.0, 0.1),
        ln1_bias: normal_vec(rng, c, 0.0, 0.1),
        ln2_gain: normal_vec(rng, c, 1.0, 0.1),
        ln2_bias: normal_vec(rng, c, 0.0, 0.1),
    }
}

/// Seeded model with the same project-out scale on every block.
pub fn gen_synthetic_model(
    seed: u64,
    config: &ModelConfig,
    weight_scale: f64,
) -> Result<FlowModel> {
    gen_synthetic_model_scaled(seed, config, &vec![weight_scale; config.blocks])
}

/// Seeded model with one project-out scale per block.
///
/// Attention weights use a `1/sqrt(fan_in)` normal init independent of the
/// scale. The project-out matrices and biases are `scale * N(0, 1)`, so a
/// zero scale yields blocks with `s = u = 0` (identity transforms). Blocks
/// alternate flip flags starting with no flip on block 0.
pub fn gen_synthetic_model_scaled(
    seed: u64,
    config: &ModelConfig,
    block_scales: &[f64],
) -> Result<FlowModel> {
    config.validate()?;
    if block_scales.len() != config.blocks {
        return Err(Error::InvalidArgument(format!(
            "{} block scales for {} blocks",
            block_scales.len(),
            config.blocks
        )));
    }
    if let Some(bad) = block_scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight scale {bad} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h) = (config.channels, config.mlp_hidden);
    let blocks = block_scales
        .iter()
        .enumerate()
        .map(|(l, &scale)| {
            let layers = (0..config.depth)
                .map(|_| gen_layer(&mut rng, c, h))
                .collect();
            FlowBlock {
                layers,
                w_s: normal_matrix(&mut rng, c, c, scale),
                b_s: normal_vec(&mut rng, c, 0.0, scale),
                w_u: normal_matrix(&mut rng, c, c, scale),
                b_u: normal_vec(&mut rng, c, 0.0, scale),
                flip: l % 2 == 1,
            }
        })
        .collect();
    FlowModel::new(config.clone(), blocks)
}

/// Standard-normal `(B, T, C)` noise from a seed.
pub fn standard_normal(seed: u64, batch: usize, seq: usize, channels: usize) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_fn(batch, seq, channels, |_, _, _| rng.sample(StandardNormal))
}
