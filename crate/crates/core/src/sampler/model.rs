use super::iterate::{gs_jacobi_sample, jacobi_sample, serial_sample, InitMode, SweepOptions};
use super::trace::ConvergenceTrace;
use crate::error::{Error, Result};
use crate::flow::{orient, FlowModel};
use crate::strategy::{BlockPlan, Strategy};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleOptions {
    pub sweep: SweepOptions,
    /// Also run the serial inverse of every block on its actual input and
    /// record distances against it.
    pub verify: bool,
}

#[derive(Debug, Clone)]
pub struct ModelSample {
    pub x: Tensor3,
    /// One trace per block, in sampling order (last block first).
    pub traces: Vec<ConvergenceTrace>,
}

impl ModelSample {
    pub fn su_evals(&self) -> usize {
        self.traces.iter().map(|t| t.su_evals).sum()
    }

    pub fn clamp_events(&self) -> usize {
        self.traces.iter().map(|t| t.clamp_events).sum()
    }
}

/// Inverts the whole model from noise `z` following `strategy`.
///
/// Blocks run from last to first. Stacked blocks get Gauss-Seidel-Jacobi with
/// their `(GS, J)` pair, the rest plain Jacobi with the `Else` budget.
/// `inits` gives each block's starting point (usually from a metric pass).
pub fn sample_model(
    model: &FlowModel,
    z: &Tensor3,
    strategy: &Strategy,
    inits: &[InitMode],
    opts: &SampleOptions,
) -> Result<ModelSample> {
    let seq = z.seq();
    strategy.check(model.num_blocks(), seq)?;
    if inits.len() != model.num_blocks() {
        return Err(Error::InvalidArgument(format!(
            "{} init modes for {} blocks",
            inits.len(),
            model.num_blocks()
        )));
    }
    let mut cur = z.clone();
    let mut traces = Vec::with_capacity(model.num_blocks());
    for (l, block) in model.blocks.iter().enumerate().rev() {
        let zin = orient(block, &cur);
        let oracle = if opts.verify {
            Some(block.inverse_serial(&zin).map_err(|e| e.in_block(l))?)
        } else {
            None
        };
        let (x, mut trace) = match strategy.plan_for(l, seq)? {
            BlockPlan::Jacobi { max_iters } => jacobi_sample(
                block,
                &zin,
                inits[l],
                max_iters,
                &opts.sweep,
                oracle.as_ref(),
            ),
            BlockPlan::GsJacobi {
                segmentation,
                j_budget,
            } => gs_jacobi_sample(
                block,
                &zin,
                &segmentation,
                j_budget,
                inits[l],
                &opts.sweep,
                oracle.as_ref(),
            ),
        }
        .map_err(|e| e.in_block(l))?;
        trace.set_block(l);
        traces.push(trace);
        cur = orient(block, &x);
    }
    Ok(ModelSample { x: cur, traces })
}

/// Serial inversion of every block with per-block cost traces.
pub fn serial_sample_model(
    model: &FlowModel,
    z: &Tensor3,
    opts: &SweepOptions,
) -> Result<ModelSample> {
    let mut cur = z.clone();
    let mut traces = Vec::with_capacity(model.num_blocks());
    for (l, block) in model.blocks.iter().enumerate().rev() {
        let (x, mut trace) =
            serial_sample(block, &orient(block, &cur), opts).map_err(|e| e.in_block(l))?;
        trace.set_block(l);
        traces.push(trace);
        cur = orient(block, &x);
    }
    Ok(ModelSample { x: cur, traces })
}
