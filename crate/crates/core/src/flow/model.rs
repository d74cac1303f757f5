use std::fmt;

use serde::{Deserialize, Serialize};

use super::block::FlowBlock;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Model hyper-parameters, written `[patch-C-L-D-N(0,std²)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    /// Channel width `C` of every position.
    pub channels: usize,
    /// Number of blocks `L`.
    pub blocks: usize,
    /// Attention layers per block `D`.
    pub depth: usize,
    /// Width `H` of the MLP inside each attention layer.
    pub mlp_hidden: usize,
    pub noise_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 2,
            channels: 4,
            blocks: 4,
            depth: 2,
            mlp_hidden: 16,
            noise_std: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 || self.depth == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "config {self} has a zero dimension"
            )));
        }
        if self.mlp_hidden < self.channels {
            return Err(Error::InvalidArgument(format!(
                "MLP width {} must be >= channel width {}",
                self.mlp_hidden, self.channels
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise std must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}-{}-{}-{}-N(0,{}²)]",
            self.patch_size, self.channels, self.blocks, self.depth, self.noise_std
        )
    }
}

/// Ordered stack of blocks. Block 0 is applied first in the forward
/// (data to noise) direction and last when sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub blocks: Vec<FlowBlock>,
}

impl FlowModel {
    pub fn new(config: ModelConfig, blocks: Vec<FlowBlock>) -> Result<Self> {
        let m = Self { config, blocks };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        if self.blocks.len() != cfg.blocks {
            return Err(Error::ModelDimension(format!(
                "config declares {} blocks, file has {}",
                cfg.blocks,
                self.blocks.len()
            )));
        }
        for (l, block) in self.blocks.iter().enumerate() {
            block
                .validate()
                .map_err(|e| Error::ModelDimension(format!("block {l}: {e}")))?;
            if block.channels() != cfg.channels {
                return Err(Error::ModelDimension(format!(
                    "block {l} has width {}, config declares {}",
                    block.channels(),
                    cfg.channels
                )));
            }
            if block.depth() != cfg.depth {
                return Err(Error::ModelDimension(format!(
                    "block {l} has {} layers, config declares {}",
                    block.depth(),
                    cfg.depth
                )));
            }
            if let Some(layer) = block
                .layers
                .iter()
                .find(|a| a.mlp_hidden() != cfg.mlp_hidden)
            {
                return Err(Error::ModelDimension(format!(
                    "block {l} has MLP width {}, config declares {}",
                    layer.mlp_hidden(),
                    cfg.mlp_hidden
                )));
            }
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    /// Data to noise through every block, honoring flip flags.
    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let mut cur = x.clone();
        for (l, block) in self.blocks.iter().enumerate() {
            cur = apply_oriented(block, &cur, |b, v| b.forward(v)).map_err(|e| e.in_block(l))?;
        }
        Ok(cur)
    }

    /// Noise to data with exact serial inversion of every block.
    pub fn inverse_serial(&self, z: &Tensor3) -> Result<Tensor3> {
        let mut cur = z.clone();
        for (l, block) in self.blocks.iter().enumerate().rev() {
            cur = apply_oriented(block, &cur, |b, v| b.inverse_serial(v))
                .map_err(|e| e.in_block(l))?;
        }
        Ok(cur)
    }

    /// Per-block `(X*, Z)` pairs in each block's own orientation, collected
    /// during one forward pass from `x`.
    pub fn forward_pairs(&self, x: &Tensor3) -> Result<Vec<(Tensor3, Tensor3)>> {
        let mut pairs = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for (l, block) in self.blocks.iter().enumerate() {
            let xin = orient(block, &cur);
            let z = block.forward(&xin).map_err(|e| e.in_block(l))?;
            cur = orient(block, &z);
            pairs.push((xin, z));
        }
        Ok(pairs)
    }
}

/// Puts `x` into the block's working orientation (or back out of it).
pub fn orient(block: &FlowBlock, x: &Tensor3) -> Tensor3 {
    if block.flip {
        x.reverse_seq()
    } else {
        x.clone()
    }
}

pub(crate) fn apply_oriented(
    block: &FlowBlock,
    x: &Tensor3,
    f: impl FnOnce(&FlowBlock, &Tensor3) -> Result<Tensor3>,
) -> Result<Tensor3> {
    Ok(orient(block, &f(block, &orient(block, x))?))
}
