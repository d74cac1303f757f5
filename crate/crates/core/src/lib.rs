//! Parallel inversion of Transformer-autoregressive affine flows.
//!
//! A flow block maps data to noise with `z_t = exp(-s_t) (x_t - u_t)`, where
//! `s_t, u_t` come from a causal attention stack over `x_{<t}`. Inverting it
//! is a triangular nonlinear system. This crate solves it serially, by
//! Jacobi fixed-point sweeps, and by Gauss-Seidel-Jacobi over contiguous
//! modules, and provides the metrics used to pick a per-block plan.
pub mod analysis;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod sampler;
pub mod strategy;
pub mod tensor;

pub use error::{Error, OverflowSite, Result};
pub use flow::{FlowBlock, FlowModel, ModelConfig};
pub use harness::BenchRecord;
pub use metrics::{MetricReport, StackSelection};
pub use sampler::{ConvergenceTrace, InitMode, Segmentation, SweepOptions};
pub use strategy::{parse_strategy, Strategy};
pub use tensor::{batch_mean, Matrix, Norm, Tensor3};
