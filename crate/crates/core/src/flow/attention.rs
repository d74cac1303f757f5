//! Pre-norm single-head causal attention layer with a GELU MLP.
//!
//! Every row is processed by the same sequence of floating-point operations
//! whether it arrives in a full parallel pass or one position at a time
//! against a key/value cache. The serial inverse and the Jacobi sweeps
//! therefore agree bit-for-bit once they are fed the same prefix.

use crate::tensor::Matrix;

pub(crate) const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_w1: Matrix,
    pub mlp_w2: Matrix,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

/// Keys and values of positions already pushed through one layer.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerCache {
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

impl LayerCache {
    pub fn extend(&mut self, keys: &[f64], values: &[f64]) {
        self.keys.extend_from_slice(keys);
        self.values.extend_from_slice(values);
    }
}

/// Per-call scratch space so the row loop does not allocate.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    q: Vec<f64>,
    normed: Vec<f64>,
    scores: Vec<f64>,
    ctx: Vec<f64>,
    proj: Vec<f64>,
    hidden: Vec<f64>,
}

impl AttentionLayer {
    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_w1.cols()
    }

    /// Checks every weight against the layer width `c`.
    pub(crate) fn shape_error(&self, c: usize) -> Option<String> {
        for (name, m) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            if m.rows() != c || m.cols() != c {
                return Some(format!(
                    "{name} is {}x{}, expected {c}x{c}",
                    m.rows(),
                    m.cols()
                ));
            }
        }
        let h = self.mlp_w1.cols();
        if self.mlp_w1.rows() != c || h < c {
            return Some(format!(
                "mlp_w1 is {}x{h}, expected {c}xH with H >= {c}",
                self.mlp_w1.rows()
            ));
        }
        if self.mlp_w2.rows() != h || self.mlp_w2.cols() != c {
            return Some(format!(
                "mlp_w2 is {}x{}, expected {h}x{c}",
                self.mlp_w2.rows(),
                self.mlp_w2.cols()
            ));
        }
        for (name, v) in [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            if v.len() != c {
                return Some(format!("{name} has length {}, expected {c}", v.len()));
            }
        }
        None
    }

    pub(crate) fn is_finite(&self) -> bool {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.mlp_w1,
            &self.mlp_w2,
        ]
        .iter()
        .all(|m| m.as_slice().iter().all(|v| v.is_finite()))
            && [
                &self.ln1_gain,
                &self.ln1_bias,
                &self.ln2_gain,
                &self.ln2_bias,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Pushes the `m` rows in `h` (row-major, `m x C`) through the layer in place.
    ///
    /// Row `i` attends to every cached position and then to window rows
    /// `0..=i`. The keys and values of the window rows are left in
    /// `new_keys` / `new_values` so the caller can commit them.
    pub(crate) fn forward_rows(
        &self,
        cache: &LayerCache,
        h: &mut [f64],
        new_keys: &mut Vec<f64>,
        new_values: &mut Vec<f64>,
        scratch: &mut Scratch,
    ) {
        let c = self.width();
        let m = h.len() / c;
        let n = cache.keys.len() / c;
        let hid = self.mlp_hidden();

        scratch.q.resize(m * c, 0.0);
        scratch.normed.resize(c, 0.0);
        scratch.ctx.resize(c, 0.0);
        scratch.proj.resize(c, 0.0);
        scratch.hidden.resize(hid, 0.0);
        scratch.scores.resize(n + m, 0.0);
        new_keys.resize(m * c, 0.0);
        new_values.resize(m * c, 0.0);

        for i in 0..m {
            let row = &h[i * c..(i + 1) * c];
            layer_norm(row, &self.ln1_gain, &self.ln1_bias, &mut scratch.normed);
            self.wq
                .left_mul_into(&scratch.normed, &mut scratch.q[i * c..(i + 1) * c]);
            self.wk
                .left_mul_into(&scratch.normed, &mut new_keys[i * c..(i + 1) * c]);
            self.wv
                .left_mul_into(&scratch.normed, &mut new_values[i * c..(i + 1) * c]);
        }

        let scale = 1.0 / (c as f64).sqrt();
        for i in 0..m {
            let q = &scratch.q[i * c..(i + 1) * c];
            let total = n + i + 1;
            let keys = cache
                .keys
                .chunks_exact(c)
                .chain(new_keys[..(i + 1) * c].chunks_exact(c));
            let mut max = f64::NEG_INFINITY;
            for (score, k) in scratch.scores[..total].iter_mut().zip(keys) {
                *score = dot(q, k) * scale;
                max = max.max(*score);
            }
            let mut denom = 0.0;
            for score in &mut scratch.scores[..total] {
                *score = (*score - max).exp();
                denom += *score;
            }
            scratch.ctx.fill(0.0);
            let values = cache
                .values
                .chunks_exact(c)
                .chain(new_values[..(i + 1) * c].chunks_exact(c));
            for (w, v) in scratch.scores[..total].iter().zip(values) {
                for (acc, x) in scratch.ctx.iter_mut().zip(v) {
                    *acc += w * x;
                }
            }
            scratch.ctx.iter_mut().for_each(|x| *x /= denom);

            let row = &mut h[i * c..(i + 1) * c];
            self.wo.left_mul_into(&scratch.ctx, &mut scratch.proj);
            add_assign(row, &scratch.proj);

            layer_norm(row, &self.ln2_gain, &self.ln2_bias, &mut scratch.normed);
            self.mlp_w1
                .left_mul_into(&scratch.normed, &mut scratch.hidden);
            scratch.hidden.iter_mut().for_each(|x| *x = gelu(*x));
            self.mlp_w2
                .left_mul_into(&scratch.hidden, &mut scratch.proj);
            add_assign(row, &scratch.proj);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for (((o, v), g), b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = (v - mean) * inv * g + b;
    }
}

/// tanh approximation of GELU; smooth, so finite differences behave.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}
