//! Error propagation of the Jacobi iteration.
//!
//! Write the inverse as the root of `f(X) = X - Σ(X) Z - μ(X)`, one row
//! `f_t = x_t - σ_t z_t - u_t` per position. A Jacobi sweep is
//! `X ← g(X) = Σ(X) Z + μ(X)`, so near the solution `X*` the error obeys
//! `ε⁽ᵏ⁺¹⁾ ≈ Γ ε⁽ᵏ⁾` with `Γ = ∂g/∂X = I - ∂f/∂X`. Because `σ_t, u_t` only
//! read `x_{<t}`, `Γ` is strictly block lower triangular, hence nilpotent,
//! and the error front moves down one position per sweep: after `T - 1`
//! sweeps it is gone.
//!
//! The same iteration is Newton's method on `f` with the Jacobian replaced
//! by its block diagonal. That diagonal is the identity (`∂f_t/∂x_t = I`), so
//! the Newton step `X - D⁻¹ f(X)` equals `g(X)`; the Jacobi samplers are
//! this method and need no separate implementation.
//!
//! `Γ` is built here by central finite differences of `g`. It is a dense
//! `(T·C)²` object and only supported up to `T·C = 256` with `B = 1`.

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowBlock;
use crate::sampler::{
    gs_jacobi_sample, jacobi_from, jacobi_sample, ConvergenceTrace, InitMode, Segmentation,
    SweepOptions,
};
use crate::tensor::{Matrix, Tensor3};

pub const MAX_GAMMA_DIM: usize = 256;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const NILPOTENT_TOL: f64 = 1e-10;

/// `f = x - σ(x) z - u(x)`; zero exactly where `x` solves the inverse.
pub fn residual_field(block: &FlowBlock, x: &Tensor3, z: &Tensor3) -> Result<Tensor3> {
    x.same_dims(z)?;
    let g = jacobi_map(block, x, z)?;
    x.zip_map(&g, |a, b| a - b)
}

/// One Jacobi update `σ(x) z + u(x)` with no clamping.
pub fn jacobi_map(block: &FlowBlock, x: &Tensor3, z: &Tensor3) -> Result<Tensor3> {
    x.same_dims(z)?;
    let (s, u) = block.eval_su(x)?;
    let mut out = z.clone();
    for ((o, sv), uv) in out
        .as_mut_slice()
        .iter_mut()
        .zip(s.as_slice())
        .zip(u.as_slice())
    {
        *o = sv.exp() * *o + uv;
    }
    if !out.is_finite() {
        return Err(Error::Overflow {
            site: Default::default(),
            max_abs: out.max_abs(),
        });
    }
    Ok(out)
}

/// Dense error-propagation matrix of one block at one point.
///
/// Row and column index `t * C + c`. Entry `((t, c), (i, d))` is
/// `∂g_{t,c} / ∂x_{i,d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    pub matrix: Matrix,
    pub seq: usize,
    pub channels: usize,
    pub fd_step: f64,
    /// Largest magnitude seen on or above the block diagonal before those
    /// entries were zeroed.
    pub upper_noise: f64,
}

impl GammaMatrix {
    pub fn dim(&self) -> usize {
        self.seq * self.channels
    }

    /// The `C x C` block coupling output position `t` to input position `i`.
    pub fn block(&self, t: usize, i: usize) -> Matrix {
        let c = self.channels;
        Matrix::from_fn(c, c, |r, k| self.matrix.get(t * c + r, i * c + k))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(v)
    }

    pub fn power(&self, k: usize) -> Matrix {
        let mut out = Matrix::identity(self.dim());
        for _ in 0..k {
            out = out.matmul(&self.matrix).expect("square");
        }
        out
    }

    /// Dense row-major CSV, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = String::new();
        for r in 0..self.dim() {
            line.clear();
            for (k, v) in self.matrix.row(r).iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "{v:e}").expect("write to String");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Central-difference `Γ` at `x` for noise `z`.
///
/// Blocks on or above the diagonal must be zero by causality. They are
/// checked against a noise floor of `10 (h² + ε·max|g| / h)` and then set to
/// exactly zero; anything larger is reported as a causality violation.
pub fn gamma_matrix(
    block: &FlowBlock,
    x: &Tensor3,
    z: &Tensor3,
    fd_step: f64,
) -> Result<GammaMatrix> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fd step {fd_step} must be > 0"
        )));
    }
    x.same_dims(z)?;
    let (b, t, c) = x.dims();
    if b != 1 {
        return Err(Error::InvalidArgument(format!("Γ needs batch 1, got {b}")));
    }
    let n = t * c;
    if n > MAX_GAMMA_DIM {
        return Err(Error::InvalidArgument(format!(
            "Γ is only built for T·C <= {MAX_GAMMA_DIM}, got {n}"
        )));
    }
    let base = jacobi_map(block, x, z)?;
    let columns = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.as_mut_slice()[j] += fd_step;
            minus.as_mut_slice()[j] -= fd_step;
            let gp = jacobi_map(block, &plus, z)?;
            let gm = jacobi_map(block, &minus, z)?;
            Ok(gp
                .as_slice()
                .iter()
                .zip(gm.as_slice())
                .map(|(a, b)| (a - b) / (2.0 * fd_step))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let floor = 10.0 * (fd_step * fd_step + f64::EPSILON * base.max_abs().max(1.0) / fd_step);
    let mut m = Matrix::zeros(n, n);
    let mut upper_noise = 0.0f64;
    for (col, values) in columns.iter().enumerate() {
        for (row, &v) in values.iter().enumerate() {
            if col / c >= row / c {
                if v.abs() > floor {
                    return Err(Error::Causality {
                        row,
                        col,
                        value: v,
                        floor,
                    });
                }
                upper_noise = upper_noise.max(v.abs());
            } else {
                m.set(row, col, v);
            }
        }
    }
    Ok(GammaMatrix {
        matrix: m,
        seq: t,
        channels: c,
        fd_step,
        upper_noise,
    })
}

/// `Γ^T` is zero to within [`NILPOTENT_TOL`].
pub fn nilpotency_check(gamma: &GammaMatrix) -> bool {
    gamma.power(gamma.seq).max_abs() <= NILPOTENT_TOL
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionPoint {
    pub delta: f64,
    pub eps0: f64,
    pub eps1: f64,
    /// `||ε⁽¹⁾ - Γ ε⁽⁰⁾||`
    pub remainder: f64,
    /// `remainder / ||ε⁽⁰⁾||²`; `NaN` when `δ = 0`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursionReport {
    pub points: Vec<RecursionPoint>,
    /// Largest over smallest finite ratio.
    pub spread: f64,
}

impl RecursionReport {
    /// Ratios agree within `factor` across all nonzero perturbations.
    pub fn stable_within(&self, factor: f64) -> bool {
        self.spread < factor
    }
}

/// Unit-norm random direction that leaves position 0 alone (the sampler
/// pins it to `z_0`).
pub fn random_direction(seed: u64, seq: usize, channels: usize) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Tensor3::from_fn(1, seq, channels, |_, t, _| {
        let v: f64 = rng.sample(StandardNormal);
        if t == 0 {
            0.0
        } else {
            v
        }
    });
    let norm = l2(d.as_slice());
    if norm > 0.0 {
        d.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
    }
    d
}

/// Checks the first-order error map.
///
/// For each `δ`, starts one Jacobi sweep from `X* + δ·d` (`d` a seeded unit
/// direction) and compares the new error with `Γ(X*)` applied to the old
/// one. The remainder should shrink like `δ²`.
pub fn verify_error_recursion(
    block: &FlowBlock,
    z: &Tensor3,
    deltas: &[f64],
    seed: u64,
    fd_step: f64,
) -> Result<RecursionReport> {
    let x_star = block.inverse_serial(z)?;
    let gamma = gamma_matrix(block, &x_star, z, fd_step)?;
    let dir = random_direction(seed, z.seq(), z.channels());
    let opts = SweepOptions::with_ebound(0.0);
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let x0 = x_star.zip_map(&dir, |a, d| a + delta * d)?;
        let eps0 = x0.zip_map(&x_star, |a, b| a - b)?;
        let (x1, _) = jacobi_from(block, z, x0, 1, &opts, None)?;
        let eps1 = x1.zip_map(&x_star, |a, b| a - b)?;
        let predicted = gamma.apply(eps0.as_slice());
        let rem: Vec<f64> = eps1
            .as_slice()
            .iter()
            .zip(&predicted)
            .map(|(a, p)| a - p)
            .collect();
        let e0 = l2(eps0.as_slice());
        let remainder = l2(&rem);
        points.push(RecursionPoint {
            delta,
            eps0: e0,
            eps1: l2(eps1.as_slice()),
            remainder,
            ratio: if e0 > 0.0 {
                remainder / (e0 * e0)
            } else {
                f64::NAN
            },
        });
    }
    let ratios: Vec<f64> = points
        .iter()
        .map(|p| p.ratio)
        .filter(|r| r.is_finite() && *r > 0.0)
        .collect();
    let spread = match (
        ratios.iter().cloned().reduce(f64::max),
        ratios.iter().cloned().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi / lo,
        _ => 1.0,
    };
    Ok(RecursionReport { points, spread })
}

/// Sampler whose convergence is traced.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceConfig {
    Jacobi {
        init: InitMode,
        max_iters: usize,
    },
    GsJacobi {
        segmentation: Segmentation,
        j_budget: usize,
        init: InitMode,
    },
}

/// Runs the serial inverse first, then the configured sampler with distances
/// to it recorded after every sweep.
pub fn convergence_distance_trace(
    block: &FlowBlock,
    z: &Tensor3,
    config: &TraceConfig,
    opts: &SweepOptions,
) -> Result<ConvergenceTrace> {
    let oracle = block.inverse_serial(z)?;
    let (_, trace) = match config {
        TraceConfig::Jacobi { init, max_iters } => {
            jacobi_sample(block, z, *init, *max_iters, opts, Some(&oracle))?
        }
        TraceConfig::GsJacobi {
            segmentation,
            j_budget,
            init,
        } => gs_jacobi_sample(
            block,
            z,
            segmentation,
            *j_budget,
            *init,
            opts,
            Some(&oracle),
        )?,
    };
    Ok(trace)
}
