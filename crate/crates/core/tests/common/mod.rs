//! Reference implementations for checking the library. Each one is written
//! the slow, obvious way and shares no code path with what it checks.
#![allow(dead_code)]

use gsjf_core::flow::FlowBlock;
use gsjf_core::{Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_tensor(seed: u64, b: usize, t: usize, c: usize) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_fn(b, t, c, |_, _, _| rng.sample(StandardNormal))
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    // Work on the orientation with at least as many rows as columns.
    let a = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, cols) = (a.rows(), a.cols());
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a.get(i, j)).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = c * x - s * y;
                    u[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = u
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn svd_spectral(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn naive_frobenius(m: &Matrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            acc += m.get(i, j) * m.get(i, j);
        }
    }
    acc.sqrt()
}

pub fn naive_one_norm(m: &Matrix) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.cols() {
        let mut col = 0.0;
        for i in 0..m.rows() {
            col += m.get(i, j).abs();
        }
        best = best.max(col);
    }
    best
}

pub fn naive_batch_mean(x: &Tensor3) -> Matrix {
    let (b, t, c) = x.dims();
    let mut m = Matrix::zeros(t, c);
    for ti in 0..t {
        for ci in 0..c {
            let mut acc = 0.0;
            for bi in 0..b {
                acc += x.get(bi, ti, ci);
            }
            m.set(ti, ci, acc / b as f64);
        }
    }
    m
}

fn prefix(x: &Tensor3, len: usize) -> Tensor3 {
    let (b, _, c) = x.dims();
    Tensor3::from_fn(b, len, c, |bi, ti, ci| x.get(bi, ti, ci))
}

/// Serial inverse that recomputes the whole prefix from scratch at every
/// step with a full parallel pass: O(T²) passes, no cache.
pub fn naive_serial_inverse(block: &FlowBlock, z: &Tensor3) -> Tensor3 {
    let (b, t, c) = z.dims();
    let mut x = Tensor3::zeros(b, t, c);
    for bi in 0..b {
        for ci in 0..c {
            x.set(bi, 0, ci, z.get(bi, 0, ci));
        }
    }
    for pos in 1..t {
        let (s, u) = block.eval_su(&prefix(&x, pos + 1)).unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let v = s.get(bi, pos, ci).exp() * z.get(bi, pos, ci) + u.get(bi, pos, ci);
                x.set(bi, pos, ci, v);
            }
        }
    }
    x
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn lu_determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        if a[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    det
}

/// Central-difference Jacobian of `f` at `x` (flat vectors).
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![vec![0.0; n]; m];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `|| mean_B(exp(s(x0)) z + u(x0) - x_star) ||_2` evaluated element by
/// element with the SVD oracle for the norm.
pub fn direct_igm(block: &FlowBlock, x0: &Tensor3, z: &Tensor3, x_star: &Tensor3) -> f64 {
    let (s, u) = block.eval_su(x0).unwrap();
    let (b, t, c) = z.dims();
    let mut mean = Matrix::zeros(t, c);
    for ti in 0..t {
        for ci in 0..c {
            let mut acc = 0.0;
            for bi in 0..b {
                let r = s.get(bi, ti, ci).exp() * z.get(bi, ti, ci) + u.get(bi, ti, ci)
                    - x_star.get(bi, ti, ci);
                acc += r;
            }
            mean.set(ti, ci, acc / b as f64);
        }
    }
    svd_spectral(&mean)
}

/// Ranks with ties averaged, 1-based.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
