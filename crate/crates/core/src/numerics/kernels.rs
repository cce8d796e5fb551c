//! Forward kernels on plain tensors.
//!
//! The autodiff graph calls these for its forward values; they are also usable
//! directly when no gradient is needed.

use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `out (m×n) += a (m×k) · b (k×n)`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (t, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out (m×n) += a (m×k) · bᵀ` where `b` is `n×k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out (m×n) += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * n..(t + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(
            "matmul_nt",
            format!("inner dimensions differ: {:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm_nt(m, k, n, a.data(), b.data(), &mut out);
    Tensor::matrix(m, n, out)
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("mul", a, b, |x, y| x * y)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("shape preserved")
}

pub fn relu(t: &Tensor) -> Tensor {
    map(t, |x| x.max(0.0))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    map(t, sigmoid_scalar)
}

/// Row-wise softmax with max subtraction. Rank-1 input is a single row.
pub fn softmax(t: &Tensor) -> Result<Tensor> {
    if t.is_empty() || t.cols() == 0 {
        return Err(Error::dim("softmax", "empty input"));
    }
    let c = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(c) {
        softmax_in_place(row);
    }
    Tensor::new(t.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Normalizes each row, returning `(output, normalized rows, inverse std per row)`.
pub(crate) fn layer_norm_parts(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let n = x.cols();
    if n < 2 {
        return Err(Error::dim("layer_norm", format!("need at least 2 features, got {n}")));
    }
    if gain.len() != n || bias.len() != n {
        return Err(Error::dim(
            "layer_norm",
            format!("input width {n}, gain {}, bias {}", gain.len(), bias.len()),
        ));
    }
    let rows = x.rows();
    let mut xhat = vec![0.0; rows * n];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..n {
            let h = (row[j] - mean) * inv;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, xhat, inv_std))
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_parts(x, gain, bias).map(|(out, _, _)| out)
}

/// Per-column maximum over the rows of `x`.
pub fn max_pool_rows(x: &Tensor) -> Result<Tensor> {
    if x.rows() == 0 || x.is_empty() {
        return Err(Error::dim("max_pool_rows", "need at least one row"));
    }
    let c = x.cols();
    let mut out = x.row(0).to_vec();
    for r in 1..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            if v > *o {
                *o = v;
            }
        }
    }
    debug_assert_eq!(out.len(), c);
    Ok(Tensor::vector(out))
}

/// Binary cross-entropy on a probability, clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

pub const PROB_CLAMP: f64 = 1e-7;

/// `−log softmax(logits)[class]`
pub fn categorical_ce(logits: &[f64], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::Index {
            what: "class logits",
            index: class,
            size: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[class])
}
