use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::segmentation::Segmentation;
use super::trace::{ConvergenceTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::flow::{sigma, BlockState, FlowBlock};
use crate::tensor::{batch_mean, Matrix, Tensor3};

pub const DEFAULT_EBOUND: f64 = 1e-8;

/// Where the fixed-point iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitMode {
    /// `X⁽⁰⁾ = Z`, the incoming noise-side sequence.
    #[serde(rename = "Z")]
    FromZ,
    /// `X⁽⁰⁾ = [z_1, 0, ..., 0]`.
    #[serde(rename = "Z0")]
    FromZ0,
}

impl InitMode {
    pub fn label(self) -> &'static str {
        match self {
            InitMode::FromZ => "Z",
            InitMode::FromZ0 => "Z0",
        }
    }
}

/// Builds `X⁽⁰⁾` for `mode`. Position 0 is always `z_0`.
pub fn initial_guess(z: &Tensor3, mode: InitMode) -> Tensor3 {
    match mode {
        InitMode::FromZ => z.clone(),
        InitMode::FromZ0 => {
            let (b, t, c) = z.dims();
            let mut x = Tensor3::zeros(b, t, c);
            x.copy_positions(z, 0..1);
            x
        }
    }
}

/// Stopping and safety knobs shared by every sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Stop a module once its mean-square sweep-to-sweep change is at or
    /// below this.
    pub ebound: f64,
    /// Clamp `s` to `[-c, c]` before exponentiating. Off by default.
    pub clamp: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            ebound: DEFAULT_EBOUND,
            clamp: None,
        }
    }
}

impl SweepOptions {
    pub fn with_ebound(ebound: f64) -> Self {
        Self {
            ebound,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ebound.is_nan() || self.ebound < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "ebound {} must be >= 0",
                self.ebound
            )));
        }
        if let Some(c) = self.clamp {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!("clamp {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Spectral norm of the batch-meaned error on positions `rows`.
pub fn module_distance(x: &Tensor3, target: &Tensor3, rows: Range<usize>) -> f64 {
    let c = x.channels();
    let diff = x.zip_map(target, |a, b| a - b).expect("same dims");
    let mean = batch_mean(&diff);
    let sub = Matrix::new(
        rows.len(),
        c,
        mean.as_slice()[rows.start * c..rows.end * c].to_vec(),
    )
    .expect("slice length");
    sub.spectral_norm()
}

struct Sweeper<'a> {
    block: &'a FlowBlock,
    z: &'a Tensor3,
    opts: SweepOptions,
    oracle: Option<&'a Tensor3>,
    s: Tensor3,
    u: Tensor3,
    trace: ConvergenceTrace,
}

impl<'a> Sweeper<'a> {
    fn new(
        block: &'a FlowBlock,
        z: &'a Tensor3,
        opts: SweepOptions,
        oracle: Option<&'a Tensor3>,
    ) -> Result<Self> {
        opts.validate()?;
        if z.channels() != block.channels() {
            return Err(Error::Dimension(format!(
                "noise has {} channels, block expects {}",
                z.channels(),
                block.channels()
            )));
        }
        if let Some(o) = oracle {
            z.same_dims(o)?;
        }
        let (b, t, c) = z.dims();
        Ok(Self {
            block,
            z,
            opts,
            oracle,
            s: Tensor3::zeros(b, t, c),
            u: Tensor3::zeros(b, t, c),
            trace: ConvergenceTrace::new(0),
        })
    }

    /// Jacobi sweeps over `rows` with everything before `rows.start` frozen
    /// in `state`. Runs at most `budget` sweeps, and never more than the
    /// number of free positions: after that many the module is exact.
    fn solve(
        &mut self,
        state: &BlockState,
        x: &mut Tensor3,
        rows: Range<usize>,
        module: usize,
        budget: usize,
    ) -> Result<()> {
        debug_assert_eq!(state.len(), rows.start);
        let free = rows.start.max(1)..rows.end;
        if free.is_empty() {
            return Ok(());
        }
        let (b, t, c) = x.dims();
        let denom = (b * t * c) as f64;
        let cap = budget.min(free.len());
        for k in 1..=cap {
            let started = Instant::now();
            self.block
                .su_window(state, x, rows.end, &mut self.s, &mut self.u)
                .map_err(|e| e.at(Some(module), k))?;
            self.trace.su_evals += 1;
            let mut residual = 0.0;
            let mut worst = 0.0f64;
            for bi in 0..b {
                for pos in free.clone() {
                    for ch in 0..c {
                        let sig = sigma(
                            self.s.get(bi, pos, ch),
                            self.opts.clamp,
                            &mut self.trace.clamp_events,
                        );
                        let new = sig * self.z.get(bi, pos, ch) + self.u.get(bi, pos, ch);
                        let old = x.get(bi, pos, ch);
                        worst = worst.max(new.abs());
                        residual += (new - old) * (new - old);
                        x.set(bi, pos, ch, new);
                    }
                }
            }
            if !worst.is_finite() || !residual.is_finite() {
                return Err(Error::overflow(worst).at(Some(module), k));
            }
            residual /= denom;
            let distance = self.oracle.map(|o| module_distance(x, o, rows.clone()));
            self.trace.records.push(TraceRecord {
                block: 0,
                module,
                iter: k,
                distance,
                residual,
                wall_ns: started.elapsed().as_nanos() as u64,
                su_evals: self.trace.su_evals,
            });
            if residual <= self.opts.ebound {
                break;
            }
        }
        Ok(())
    }
}

/// Parallel fixed-point iteration `x⁽ᵏ⁺¹⁾_t = exp(s_t(x⁽ᵏ⁾)) z_t + u_t(x⁽ᵏ⁾)`.
///
/// Runs at most `max_iters` sweeps (capped at `T - 1`, after which the
/// iterate is exact) and stops early once the mean-square change is at or
/// below `opts.ebound`. With `oracle` set, each sweep records its distance to
/// it.
pub fn jacobi_sample(
    block: &FlowBlock,
    z: &Tensor3,
    init: InitMode,
    max_iters: usize,
    opts: &SweepOptions,
    oracle: Option<&Tensor3>,
) -> Result<(Tensor3, ConvergenceTrace)> {
    jacobi_from(block, z, initial_guess(z, init), max_iters, opts, oracle)
}

/// [`jacobi_sample`] from an explicit starting point.
pub fn jacobi_from(
    block: &FlowBlock,
    z: &Tensor3,
    x0: Tensor3,
    max_iters: usize,
    opts: &SweepOptions,
    oracle: Option<&Tensor3>,
) -> Result<(Tensor3, ConvergenceTrace)> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    z.same_dims(&x0)?;
    let mut sw = Sweeper::new(block, z, *opts, oracle)?;
    let mut x = x0;
    x.copy_positions(z, 0..1);
    let state = block.new_state(z.batch());
    sw.solve(&state, &mut x, 0..z.seq(), 0, max_iters)?;
    Ok((x, sw.trace))
}

/// Modular Gauss-Seidel-Jacobi: Jacobi sweeps inside each group of `seg`,
/// groups solved in order with earlier groups frozen.
///
/// Each group gets at most `j_budget` sweeps and stops early on
/// `opts.ebound`. A group's sweeps evaluate only its own positions, reusing
/// the cached attention state of the frozen prefix.
pub fn gs_jacobi_sample(
    block: &FlowBlock,
    z: &Tensor3,
    seg: &Segmentation,
    j_budget: usize,
    init: InitMode,
    opts: &SweepOptions,
    oracle: Option<&Tensor3>,
) -> Result<(Tensor3, ConvergenceTrace)> {
    if j_budget == 0 {
        return Err(Error::InvalidArgument("Jacobi budget must be >= 1".into()));
    }
    if seg.seq_len() != z.seq() {
        return Err(Error::Dimension(format!(
            "segmentation covers {} positions, sequence has {}",
            seg.seq_len(),
            z.seq()
        )));
    }
    let mut sw = Sweeper::new(block, z, *opts, oracle)?;
    let mut x = initial_guess(z, init);
    x.copy_positions(z, 0..1);
    let mut state = block.new_state(z.batch());
    for (g, rows) in seg.groups().enumerate() {
        sw.solve(&state, &mut x, rows.clone(), g, j_budget)?;
        if rows.end < z.seq() {
            block.commit(&mut state, &x, rows.end);
        }
    }
    Ok((x, sw.trace))
}

/// Exact serial inverse with the same trace bookkeeping as the iterative
/// samplers: `T - 1` s/u evaluations and a single summary record.
pub fn serial_sample(
    block: &FlowBlock,
    z: &Tensor3,
    opts: &SweepOptions,
) -> Result<(Tensor3, ConvergenceTrace)> {
    opts.validate()?;
    let started = Instant::now();
    let (x, stats) = block.inverse_serial_with(z, opts.clamp)?;
    let mut trace = ConvergenceTrace::new(0);
    trace.su_evals = stats.su_evals;
    trace.clamp_events = stats.clamp_events;
    if stats.su_evals > 0 {
        trace.records.push(TraceRecord {
            block: 0,
            module: 0,
            iter: stats.su_evals,
            distance: None,
            residual: 0.0,
            wall_ns: started.elapsed().as_nanos() as u64,
            su_evals: stats.su_evals,
        });
    }
    Ok((x, trace))
}
