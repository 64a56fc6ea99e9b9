//! Validated tensor-level operations.
//!
//! These are the checked, fallible entry points for the core layer
//! computations. The differentiable path through [`super::Tape`] shares the
//! same kernels, so values here and on tape agree exactly.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::kernels as kn;
use super::tensor::Tensor;

/// `y = x·W + b` for `x:[n,in]`, `W:[in,out]`, `b:[out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 {
        return Err(Error::shape("linear", "x and W must be matrices"));
    }
    if x.shape()[1] != w.shape()[0] {
        return Err(Error::shape(
            "linear",
            format!(
                "x is {:?} but W is {:?}: inner dims {} vs {}",
                x.shape(),
                w.shape(),
                x.shape()[1],
                w.shape()[0]
            ),
        ));
    }
    if b.numel() != w.shape()[1] {
        return Err(Error::shape(
            "linear",
            format!("bias has {} entries for {} outputs", b.numel(), w.shape()[1]),
        ));
    }
    let mut y = kn::matmul(x, w);
    let (n, m) = (y.shape()[0], y.shape()[1]);
    for i in 0..n {
        for j in 0..m {
            y.data_mut()[i * m + j] += b.data()[j];
        }
    }
    Ok(y)
}

/// Scaled dot-product attention `softmax(QKᵀ/√d)·V`.
///
/// `window`, when set, restricts each query position to keys within
/// `±window` of it, which requires `n == m` (self-attention layouts).
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, window: Option<usize>) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::shape("softmax_attention", "Q, K, V must be matrices"));
    }
    let d = q.shape()[1];
    if k.shape()[1] != d {
        return Err(Error::shape(
            "softmax_attention",
            format!("Q width {} vs K width {}", d, k.shape()[1]),
        ));
    }
    if k.shape()[0] != v.shape()[0] {
        return Err(Error::shape(
            "softmax_attention",
            format!("K has {} rows but V has {}", k.shape()[0], v.shape()[0]),
        ));
    }
    let (n, m) = (q.shape()[0], k.shape()[0]);
    if window.is_some() && n != m {
        return Err(Error::InvalidArg(format!(
            "windowed attention requires square layout, got {n} queries and {m} keys"
        )));
    }
    let mut scores = kn::matmul_nt(q, k);
    scores.scale_assign(1.0 / (d as f64).sqrt());
    if let Some(w) = window {
        for i in 0..n {
            for j in 0..m {
                if i.abs_diff(j) > w {
                    scores.data_mut()[i * m + j] = f64::NEG_INFINITY;
                }
            }
        }
    }
    let attn = kn::softmax_rows(&scores);
    Ok(kn::matmul(&attn, v))
}

/// 1-D convolution (cross-correlation) with zero padding chosen so the output
/// length is `ceil(T/stride)`.
///
/// `x:[T,Cin]`, `kernel:[k,Cin,Cout]`.
pub fn conv1d(x: &Tensor, kernel: &Tensor, stride: usize, dilation: usize) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("conv1d", "input must be [T, Cin]"));
    }
    if kernel.rank() != 3 {
        return Err(Error::shape("conv1d", "kernel must be [k, Cin, Cout]"));
    }
    if stride < 1 || dilation < 1 {
        return Err(Error::InvalidArg(format!(
            "conv1d stride and dilation must be >= 1, got {stride}/{dilation}"
        )));
    }
    let (t, cin) = (x.shape()[0], x.shape()[1]);
    let (k, kcin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kcin != cin {
        return Err(Error::shape(
            "conv1d",
            format!("input has {cin} channels, kernel expects {kcin}"),
        ));
    }
    let (t_out, idx) = kn::conv1d_gather(t, cin, k, stride, dilation);
    let mut patches = vec![0.0; t_out * k * cin];
    for (slot, &i) in patches.iter_mut().zip(&idx) {
        *slot = if i < 0 { 0.0 } else { x.data()[i as usize] };
    }
    let patches = Tensor::new(vec![t_out, k * cin], patches)?;
    let w = kernel.reshaped(vec![k * cin, cout])?;
    Ok(kn::matmul(&patches, &w))
}

/// Align-corners linear resample of `x:[n,C]` to `m` rows. Endpoints are
/// preserved exactly and every output row is a convex combination of two
/// adjacent input rows.
pub fn linear_interpolate(x: &Tensor, target_len: usize) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("linear_interpolate", "input must be [n, C]"));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if n < 2 || target_len < 2 {
        return Err(Error::InvalidArg(format!(
            "linear_interpolate needs n >= 2 and target >= 2, got n={n}, target={target_len}"
        )));
    }
    let plan = kn::interp_plan(n, target_len);
    let mut data = vec![0.0; target_len * c];
    for (j, tap) in plan.iter().enumerate() {
        for ch in 0..c {
            data[j * c + ch] =
                (1.0 - tap.w) * x.data()[tap.lo * c + ch] + tap.w * x.data()[tap.hi * c + ch];
        }
    }
    Tensor::new(vec![target_len, c], data)
}

/// Convenience wrapper: im2col gather indices for a conv over `[T,Cin]`,
/// shared with the tape path.
pub fn conv1d_plan(t: usize, cin: usize, k: usize, stride: usize, dilation: usize) -> (usize, Rc<Vec<i64>>) {
    let (t_out, idx) = kn::conv1d_gather(t, cin, k, stride, dilation);
    (t_out, Rc::new(idx))
}

/// Cubic pooling gather indices over a `(gl,gh,gw)` token grid, shared with
/// the tape path.
pub fn pool3d_plan(gl: usize, gh: usize, gw: usize, c: usize, f: usize) -> ((usize, usize, usize), Rc<Vec<i64>>) {
    let (grid, idx) = kn::pool3d_gather(gl, gh, gw, c, f);
    (grid, Rc::new(idx))
}
