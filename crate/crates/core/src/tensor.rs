//! Dense rank-3 tensors, row-major matrices and the matrix norms used by the
//! metrics and convergence traces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POWER_ITERS: usize = 200;
pub const POWER_TOL: f64 = 1e-12;

/// A `(batch, seq, channels)` array stored batch-outermost, channel-innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    seq: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(batch: usize, seq: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if seq == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "sequence length and channel width must be >= 1, got T={seq} C={channels}"
            )));
        }
        if data.len() != batch * seq * channels {
            return Err(Error::Dimension(format!(
                "data length {} != {batch}*{seq}*{channels}",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            seq,
            channels,
            data,
        })
    }

    pub fn zeros(batch: usize, seq: usize, channels: usize) -> Self {
        assert!(seq > 0 && channels > 0, "T and C must be positive");
        Self {
            batch,
            seq,
            channels,
            data: vec![0.0; batch * seq * channels],
        }
    }

    pub fn from_fn(
        batch: usize,
        seq: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(batch, seq, channels);
        for b in 0..batch {
            for t in 0..seq {
                for c in 0..channels {
                    out.data[(b * seq + t) * channels + c] = f(b, t, c);
                }
            }
        }
        out
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.seq, self.channels)
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn seq(&self) -> usize {
        self.seq
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, b: usize, t: usize, c: usize) -> usize {
        debug_assert!(b < self.batch && t < self.seq && c < self.channels);
        (b * self.seq + t) * self.channels + c
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.offset(b, t, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        let i = self.offset(b, t, c);
        self.data[i] = v;
    }

    /// The `C` entries at `(b, t)`.
    #[inline]
    pub fn row(&self, b: usize, t: usize) -> &[f64] {
        let o = self.offset(b, t, 0);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let o = self.offset(b, t, 0);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// The `T*C` slab of batch item `b`.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.seq * self.channels;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.seq * self.channels;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise |self - other|. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims(), other.dims(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.same_dims(other)?;
        Ok(Tensor3 {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            ..*self
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..*self
        }
    }

    /// Reverses the sequence axis.
    pub fn reverse_seq(&self) -> Tensor3 {
        let mut out = Tensor3::zeros(self.batch, self.seq, self.channels);
        for b in 0..self.batch {
            for t in 0..self.seq {
                out.row_mut(b, self.seq - 1 - t)
                    .copy_from_slice(self.row(b, t));
            }
        }
        out
    }

    /// Copies positions `range` of every batch item from `src`.
    pub fn copy_positions(&mut self, src: &Tensor3, range: std::ops::Range<usize>) {
        assert_eq!(self.dims(), src.dims());
        let c = self.channels;
        for b in 0..self.batch {
            let lo = self.offset(b, range.start, 0);
            let hi = lo + range.len() * c;
            self.data[lo..hi].copy_from_slice(&src.data[lo..hi]);
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} != {rows}*{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|v| alpha * v).collect(),
            ..*self
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (dst, w) in o.iter_mut().zip(rhs.row(k)) {
                    *dst += a * w;
                }
            }
        }
        Ok(out)
    }

    /// `x * self` for a row vector `x` of length `rows`; writes `cols` entries.
    #[inline]
    pub fn left_mul_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (k, a) in x.iter().enumerate() {
            for (dst, w) in out.iter_mut().zip(self.row(k)) {
                *dst += a * w;
            }
        }
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn one_norm(&self) -> f64 {
        one_norm(self)
    }

    /// Largest singular value with the default power-iteration settings.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(self, POWER_ITERS, POWER_TOL).value
    }
}

/// Arithmetic mean over the batch axis, giving a `(T, C)` matrix.
pub fn batch_mean(x: &Tensor3) -> Matrix {
    let (b, t, c) = x.dims();
    let mut out = Matrix::zeros(t, c);
    for bi in 0..b {
        for (dst, v) in out.data.iter_mut().zip(x.item(bi)) {
            *dst += v;
        }
    }
    if b > 0 {
        let inv = b as f64;
        out.data.iter_mut().for_each(|v| *v /= inv);
    }
    out
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Induced 1-norm: maximum absolute column sum.
pub fn one_norm(m: &Matrix) -> f64 {
    (0..m.cols)
        .map(|j| (0..m.rows).map(|i| m.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Squarings applied to the Gram matrix before iterating; the iteration
/// then contracts at `(σ₂/σ₁)^(2^(SQUARINGS+1))` per step.
const SQUARINGS: usize = 6;

/// Largest singular value by power iteration.
///
/// Iterates on `G^(2^6)` where `G` is the smaller of `mᵀm` and `mmᵀ`, so
/// nearly tied leading singular values still separate within a few steps,
/// and reads `σ` off the Rayleigh quotient of `G` itself. Starts from the
/// normalized all-ones vector; if that start is annihilated, restarts from
/// the basis vector of the heaviest Gram diagonal entry. Stops when the
/// estimate's relative change (extrapolated over the observed rate) is at
/// most `tol`.
pub fn spectral_norm(m: &Matrix, iters: usize, tol: f64) -> SpectralNorm {
    if m.is_empty() || m.max_abs() == 0.0 {
        return SpectralNorm {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let gram = if m.rows < m.cols {
        m.matmul(&m.transpose()).expect("square")
    } else {
        m.transpose().matmul(m).expect("square")
    };
    let n = gram.rows;
    let mut h = gram.clone();
    for _ in 0..SQUARINGS {
        let peak = h.max_abs();
        if peak == 0.0 || !peak.is_finite() {
            break;
        }
        h = h.scale(1.0 / peak);
        h = h.matmul(&h).expect("square");
    }
    let peak = h.max_abs();
    if peak > 0.0 && peak.is_finite() {
        h = h.scale(1.0 / peak);
    } else {
        h = gram.clone();
    }
    let iters = iters.max(1);
    let start = vec![1.0 / (n as f64).sqrt(); n];
    if let Some(r) = power_iterate(&gram, &h, start, iters, tol) {
        return r;
    }
    let heaviest = (0..n)
        .fold((0, -1.0), |best, j| {
            if gram.get(j, j) > best.1 {
                (j, gram.get(j, j))
            } else {
                best
            }
        })
        .0;
    let mut e = vec![0.0; n];
    e[heaviest] = 1.0;
    power_iterate(&gram, &gram, e, iters, tol).expect("heaviest direction is not annihilated")
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.into_iter().map(|x| x / norm).collect())
}

fn rayleigh_sigma(gram: &Matrix, v: &[f64]) -> f64 {
    let gv = gram.mul_vec(v);
    v.iter()
        .zip(&gv)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

fn power_iterate(
    gram: &Matrix,
    h: &Matrix,
    v: Vec<f64>,
    iters: usize,
    tol: f64,
) -> Option<SpectralNorm> {
    let mut v = unit(h.mul_vec(&v))?;
    let mut prev = rayleigh_sigma(gram, &v);
    let mut prev_step = f64::NAN;
    for k in 1..=iters {
        v = unit(h.mul_vec(&v))?;
        let sigma = rayleigh_sigma(gram, &v);
        let step = (sigma - prev).abs();
        // Extrapolate the remaining climb from the observed geometric rate.
        let rate = if prev_step > 0.0 {
            (step / prev_step).min(0.999)
        } else {
            0.0
        };
        let remainder = step * rate / (1.0 - rate);
        if step.max(remainder) <= tol * sigma {
            return Some(SpectralNorm {
                value: sigma,
                converged: true,
                iterations: k,
            });
        }
        prev_step = step;
        prev = sigma;
    }
    Some(SpectralNorm {
        value: prev,
        converged: false,
        iterations: iters,
    })
}

/// Matrix norm used for metrics and distance traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Spectral,
    Frobenius,
    One,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::Spectral, Norm::Frobenius, Norm::One];

    pub fn apply(self, m: &Matrix) -> f64 {
        match self {
            Norm::Spectral => m.spectral_norm(),
            Norm::Frobenius => frobenius_norm(m),
            Norm::One => one_norm(m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Spectral => "spectral",
            Norm::Frobenius => "frobenius",
            Norm::One => "one",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" | "2" => Ok(Norm::Spectral),
            "frobenius" | "f" | "F" => Ok(Norm::Frobenius),
            "one" | "1" => Ok(Norm::One),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

/// Splits each flat `(B, 1, N)` item into `N / patch` positions of `patch` channels.
pub fn patchify(flat: &Tensor3, patch: usize) -> Result<Tensor3> {
    let (b, t, c) = flat.dims();
    if t != 1 {
        return Err(Error::Dimension(format!(
            "patchify expects a (B, 1, N) tensor, got T={t}"
        )));
    }
    if patch == 0 || c % patch != 0 {
        return Err(Error::Dimension(format!(
            "{c} entries do not split into patches of {patch}"
        )));
    }
    Tensor3::new(b, c / patch, patch, flat.as_slice().to_vec())
}

pub fn unpatchify(x: &Tensor3) -> Tensor3 {
    let (b, t, c) = x.dims();
    Tensor3::new(b, 1, t * c, x.as_slice().to_vec()).expect("same length")
}
