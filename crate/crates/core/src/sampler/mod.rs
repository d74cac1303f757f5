//! Inversion of flow blocks: serial, parallel Jacobi fixed-point, and modular
//! Gauss-Seidel-Jacobi.
//!
//! Every sampler counts s/u evaluations (one per sweep, or one per position
//! for the serial loop) as the hardware-independent cost.

mod iterate;
mod model;
mod segmentation;
mod trace;

pub use iterate::{
    gs_jacobi_sample, initial_guess, jacobi_from, jacobi_sample, module_distance, serial_sample,
    InitMode, SweepOptions, DEFAULT_EBOUND,
};
pub use model::{sample_model, serial_sample_model, ModelSample, SampleOptions};
pub use segmentation::Segmentation;
pub use trace::{traces_to_csv, write_traces_csv, ConvergenceTrace, TraceRecord, TRACE_CSV_HEADER};
