use rayon::prelude::*;

use super::attention::{AttentionLayer, LayerCache, Scratch};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// One autoregressive affine block: `z_t = exp(-s_t) * (x_t - u_t)` where
/// `s_t, u_t` are read off the attention stack at position `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBlock {
    pub layers: Vec<AttentionLayer>,
    pub w_s: Matrix,
    pub b_s: Vec<f64>,
    pub w_u: Matrix,
    pub b_u: Vec<f64>,
    /// Reverse the sequence before applying the block (and undo it after).
    pub flip: bool,
}

/// Incremental attention state for a batch of sequences: keys and values for
/// the first `len` positions of every layer, plus the final hidden row of
/// position `len - 1`.
#[derive(Debug, Clone)]
pub struct BlockState {
    items: Vec<SeqState>,
    len: usize,
}

#[derive(Debug, Clone)]
struct SeqState {
    layers: Vec<LayerCache>,
    last_hidden: Vec<f64>,
}

impl BlockState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Counters from a serial inversion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SerialStats {
    pub su_evals: usize,
    pub clamp_events: usize,
}

impl FlowBlock {
    pub fn channels(&self) -> usize {
        self.w_s.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Checks that every weight agrees with the block width.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let fail = |msg: String| Err(Error::ModelDimension(msg));
        if c == 0 {
            return fail("block has zero channels".into());
        }
        if self.layers.is_empty() {
            return fail("block has no attention layers".into());
        }
        for (name, m) in [("w_s", &self.w_s), ("w_u", &self.w_u)] {
            if m.rows() != c || m.cols() != c {
                return fail(format!(
                    "{name} is {}x{}, expected {c}x{c}",
                    m.rows(),
                    m.cols()
                ));
            }
        }
        for (name, v) in [("b_s", &self.b_s), ("b_u", &self.b_u)] {
            if v.len() != c {
                return fail(format!("{name} has length {}, expected {c}", v.len()));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(msg) = layer.shape_error(c) {
                return fail(format!("layer {l}: {msg}"));
            }
        }
        Ok(())
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.layers.iter().all(AttentionLayer::is_finite)
            && [&self.w_s, &self.w_u]
                .iter()
                .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
            && self.b_s.iter().chain(&self.b_u).all(|v| v.is_finite())
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Dimension(format!(
                "input has {} channels, block expects {}",
                x.channels(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Empty attention state for `batch` sequences.
    pub fn new_state(&self, batch: usize) -> BlockState {
        BlockState {
            items: vec![
                SeqState {
                    layers: vec![LayerCache::default(); self.layers.len()],
                    last_hidden: Vec::new(),
                };
                batch
            ],
            len: 0,
        }
    }

    /// `s` and `u` for every position in one parallel pass. Position 0 is
    /// always zero.
    pub fn eval_su(&self, x: &Tensor3) -> Result<(Tensor3, Tensor3)> {
        self.check_input(x)?;
        let (b, t, c) = x.dims();
        let mut s = Tensor3::zeros(b, t, c);
        let mut u = Tensor3::zeros(b, t, c);
        self.su_window(&self.new_state(b), x, t, &mut s, &mut u)?;
        Ok((s, u))
    }

    /// Fills `s`, `u` at positions `state.len()..end`, reading `x` only at
    /// positions `state.len()..end - 1`; earlier positions come from the cache.
    pub fn su_window(
        &self,
        state: &BlockState,
        x: &Tensor3,
        end: usize,
        s: &mut Tensor3,
        u: &mut Tensor3,
    ) -> Result<()> {
        let (_, t, c) = x.dims();
        let start = state.len;
        assert!(
            start < end && end <= t,
            "window {start}..{end} outside 0..{t}"
        );
        assert_eq!(state.items.len(), x.batch(), "state batch mismatch");
        let tc = t * c;

        let bad = s
            .as_mut_slice()
            .par_chunks_mut(tc)
            .zip(u.as_mut_slice().par_chunks_mut(tc))
            .zip(state.items.par_iter())
            .enumerate()
            .map(|(b, ((s_item, u_item), seq))| {
                let s_win = &mut s_item[start * c..end * c];
                let u_win = &mut u_item[start * c..end * c];
                if start == 0 {
                    s_win[..c].fill(0.0);
                    u_win[..c].fill(0.0);
                } else {
                    self.project_out(&seq.last_hidden, &mut s_win[..c], &mut u_win[..c]);
                }
                if end - start > 1 {
                    let mut h = x.item(b)[start * c..(end - 1) * c].to_vec();
                    let mut scratch = Scratch::default();
                    let (mut keys, mut values) = (Vec::new(), Vec::new());
                    for (layer, cache) in self.layers.iter().zip(&seq.layers) {
                        layer.forward_rows(cache, &mut h, &mut keys, &mut values, &mut scratch);
                    }
                    for (i, row) in h.chunks_exact(c).enumerate() {
                        let o = (i + 1) * c;
                        self.project_out(row, &mut s_win[o..o + c], &mut u_win[o..o + c]);
                    }
                }
                s_win
                    .iter()
                    .chain(u_win.iter())
                    .filter(|v| !v.is_finite())
                    .count()
            })
            .sum::<usize>();
        if bad > 0 {
            return Err(Error::overflow(f64::INFINITY));
        }
        Ok(())
    }

    /// Appends positions `state.len()..end` of `x` to the attention cache.
    pub fn commit(&self, state: &mut BlockState, x: &Tensor3, end: usize) {
        let (_, t, c) = x.dims();
        let start = state.len;
        assert!(
            start < end && end <= t,
            "commit {start}..{end} outside 0..{t}"
        );
        state.items.par_iter_mut().enumerate().for_each(|(b, seq)| {
            let mut h = x.item(b)[start * c..end * c].to_vec();
            let mut scratch = Scratch::default();
            let (mut keys, mut values) = (Vec::new(), Vec::new());
            for (layer, cache) in self.layers.iter().zip(seq.layers.iter_mut()) {
                layer.forward_rows(cache, &mut h, &mut keys, &mut values, &mut scratch);
                cache.extend(&keys, &values);
            }
            seq.last_hidden.clear();
            seq.last_hidden
                .extend_from_slice(&h[(end - start - 1) * c..]);
        });
        state.len = end;
    }

    fn project_out(&self, hidden: &[f64], s: &mut [f64], u: &mut [f64]) {
        self.w_s.left_mul_into(hidden, s);
        self.w_u.left_mul_into(hidden, u);
        for (v, b) in s.iter_mut().zip(&self.b_s) {
            *v += b;
        }
        for (v, b) in u.iter_mut().zip(&self.b_u) {
            *v += b;
        }
    }

    /// `z_t = exp(-s_t) * (x_t - u_t)` for all positions at once.
    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let (s, u) = self.eval_su(x)?;
        let mut z = x.clone();
        for ((zv, sv), uv) in z
            .as_mut_slice()
            .iter_mut()
            .zip(s.as_slice())
            .zip(u.as_slice())
        {
            *zv = (-sv).exp() * (*zv - uv);
        }
        if !z.is_finite() {
            return Err(Error::overflow(z.max_abs()));
        }
        Ok(z)
    }

    /// Exact inverse, one position at a time against a growing attention cache.
    pub fn inverse_serial(&self, z: &Tensor3) -> Result<Tensor3> {
        self.inverse_serial_with(z, None).map(|(x, _)| x)
    }

    /// Serial inverse with optional clamping of `s` to `[-clamp, clamp]`
    /// before exponentiation.
    pub fn inverse_serial_with(
        &self,
        z: &Tensor3,
        clamp: Option<f64>,
    ) -> Result<(Tensor3, SerialStats)> {
        self.check_input(z)?;
        let (b, t, c) = z.dims();
        let mut x = Tensor3::zeros(b, t, c);
        let mut stats = SerialStats::default();
        x.copy_positions(z, 0..1);
        let mut state = self.new_state(b);
        self.commit(&mut state, &x, 1);
        let mut s = Tensor3::zeros(b, t, c);
        let mut u = Tensor3::zeros(b, t, c);
        for pos in 1..t {
            self.su_window(&state, &x, pos + 1, &mut s, &mut u)
                .map_err(|e| e.at(None, pos))?;
            stats.su_evals += 1;
            for bi in 0..b {
                for ch in 0..c {
                    let sig = sigma(s.get(bi, pos, ch), clamp, &mut stats.clamp_events);
                    x.set(bi, pos, ch, sig * z.get(bi, pos, ch) + u.get(bi, pos, ch));
                }
                if x.row(bi, pos).iter().any(|v| !v.is_finite()) {
                    return Err(Error::overflow(f64::INFINITY).at(None, pos));
                }
            }
            if pos + 1 < t {
                self.commit(&mut state, &x, pos + 1);
            }
        }
        Ok((x, stats))
    }

    /// Forward log-determinant per batch item: `-sum_t sum_c s[t, c]`.
    pub fn log_det(&self, x: &Tensor3) -> Result<Vec<f64>> {
        let (s, _) = self.eval_su(x)?;
        Ok((0..s.batch())
            .map(|b| -s.item(b).iter().sum::<f64>())
            .collect())
    }
}

/// `exp(s)`, optionally clamping `s` first and counting clamp hits.
#[inline]
pub(crate) fn sigma(s: f64, clamp: Option<f64>, events: &mut usize) -> f64 {
    match clamp {
        Some(lim) if s.abs() > lim => {
            *events += 1;
            s.clamp(-lim, lim).exp()
        }
        _ => s.exp(),
    }
}
