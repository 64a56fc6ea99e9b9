//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] records tensor ops as they execute; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients. Ops validate shapes with
//! panics — building a malformed graph is a programmer error, mirroring how
//! dense-algebra crates treat dimension mismatches. The validated, fallible
//! entry points for the public operation contracts live in [`super::ops`].

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};
use std::rc::Rc;

use indexmap::IndexMap;

use super::kernels as kn;
use super::params::ParamStore;
use super::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &mut dyn FnMut(usize, Tensor))>;

struct Node {
    value: Rc<Tensor>,
    back: Option<BackFn>,
}

/// Gradients for every reached node of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            back,
        });
        Var(self.nodes.len() - 1)
    }

    fn rc(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar payload of a `[1]`-shaped node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar_value on non-scalar {:?}", t.shape());
        t.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf with no gradient flow (inputs, masks, frozen features).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Leaf that participates in backward (parameters).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        // A leaf has no parents; its gradient is read from the `Gradients`
        // table directly, so no back closure is needed.
        self.push(t, None)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            if let Some(back) = &self.nodes[i].back {
                back(&g, &mut |p, contrib| match &mut grads[p] {
                    Some(t) => t.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                });
            }
        }
        Gradients { grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "add shapes");
        let mut out = (*va).clone();
        out.add_assign(&vb);
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                emit(a.0, g.clone());
                emit(b.0, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "mul shapes");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let ga = g
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(gv, y)| gv * y)
                    .collect();
                let gb = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gv, x)| gv * x)
                    .collect();
                emit(a.0, Tensor::new(g.shape().to_vec(), ga).unwrap());
                emit(b.0, Tensor::new(g.shape().to_vec(), gb).unwrap());
            })),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "div shapes");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x / y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(gv, y)| gv / y)
                    .collect();
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(va.data().iter().zip(vb.data()))
                    .map(|(gv, (x, y))| -gv * x / (y * y))
                    .collect();
                emit(a.0, Tensor::new(g.shape().to_vec(), ga).unwrap());
                emit(b.0, Tensor::new(g.shape().to_vec(), gb).unwrap());
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.rc(a);
        let mut out = (*va).clone();
        out.scale_assign(c);
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gg = g.clone();
                gg.scale_assign(c);
                emit(a.0, gg);
            })),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let va = self.rc(a);
        let data = va.data().iter().map(|x| x + c).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(out, Some(Box::new(move |g, emit| emit(a.0, g.clone()))))
    }

    /// Elementwise add of a constant tensor (attention masks and the like).
    pub fn add_const(&mut self, a: Var, t: &Tensor) -> Var {
        let va = self.rc(a);
        assert_eq!(va.shape(), t.shape(), "add_const shapes");
        let mut out = (*va).clone();
        out.add_assign(t);
        self.push(out, Some(Box::new(move |g, emit| emit(a.0, g.clone()))))
    }

    /// Elementwise multiply by a constant tensor (validity masks, channel
    /// ablations).
    pub fn mul_const(&mut self, a: Var, t: &Tensor) -> Var {
        let va = self.rc(a);
        assert_eq!(va.shape(), t.shape(), "mul_const shapes");
        let mask = t.clone();
        let data = va.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let gd = g
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(gv, m)| gv * m)
                    .collect();
                emit(a.0, Tensor::new(g.shape().to_vec(), gd).unwrap());
            })),
        )
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let va = self.rc(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let gd = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gv, &x)| gv * df(x))
                    .collect();
                emit(a.0, Tensor::new(g.shape().to_vec(), gd).unwrap());
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, kn::gelu, kn::gelu_grad)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kn::sigmoid, |x| {
            let s = kn::sigmoid(x);
            s * (1.0 - s)
        })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, kn::softplus, kn::sigmoid)
    }

    /// `x^p` for strictly positive inputs.
    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, move |x| x.powf(p), move |x| p * x.powf(p - 1.0))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.rc(a), self.rc(b));
        let out = kn::matmul(&va, &vb);
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                emit(a.0, kn::matmul_nt(g, &vb));
                emit(b.0, kn::matmul_tn(&va, g));
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let va = self.rc(a);
        let (n, m) = (va.shape()[0], va.shape()[1]);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = va.data()[i * m + j];
            }
        }
        let out = Tensor::new(vec![m, n], data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * m];
                for j in 0..m {
                    for i in 0..n {
                        gd[i * m + j] = g.data()[j * n + i];
                    }
                }
                emit(a.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Row-broadcast bias add: `x:[n,m] + b:[m]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.rc(x), self.rc(b));
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert_eq!(vb.numel(), m, "add_row bias width");
        let mut data = vx.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] += vb.data()[j];
            }
        }
        let out = Tensor::new(vec![n, m], data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                emit(x.0, g.clone());
                emit(b.0, kn::colsum(g));
            })),
        )
    }

    /// Row-broadcast multiply: `x:[n,m] ⊙ w:[m]`.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.rc(x), self.rc(w));
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert_eq!(vw.numel(), m, "mul_row width");
        let mut data = vx.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] *= vw.data()[j];
            }
        }
        let out = Tensor::new(vec![n, m], data).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gx = vec![0.0; n * m];
                let mut gw = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        let gv = g.data()[i * m + j];
                        gx[i * m + j] = gv * vw.data()[j];
                        gw[j] += gv * vx.data()[i * m + j];
                    }
                }
                emit(x.0, Tensor::new(vec![n, m], gx).unwrap());
                emit(w.0, Tensor::new(vec![m], gw).unwrap());
            })),
        )
    }

    /// `x·W + b` with `x:[n,in]`, `W:[in,out]`, `b:[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let vx = self.rc(x);
        let y = kn::softmax_rows(&vx);
        let vy = Rc::new(y.clone());
        self.push(
            y,
            Some(Box::new(move |g, emit| {
                let (n, m) = (vy.shape()[0], vy.shape()[1]);
                let mut gd = vec![0.0; n * m];
                for i in 0..n {
                    let yr = &vy.data()[i * m..(i + 1) * m];
                    let gr = &g.data()[i * m..(i + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..m {
                        gd[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                emit(x.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.rc(x), self.rc(gamma), self.rc(beta));
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert_eq!(vg.numel(), m, "layer_norm gamma width");
        assert_eq!(vb.numel(), m, "layer_norm beta width");
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &vx.data()[i * m..(i + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..m {
                let xh = (row[j] - mu) * inv;
                xhat[i * m + j] = xh;
                out[i * m + j] = vg.data()[j] * xh + vb.data()[j];
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let out = Tensor::new(vec![n, m], out).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gx = vec![0.0; n * m];
                let mut ggamma = vec![0.0; m];
                let mut gbeta = vec![0.0; m];
                for i in 0..n {
                    let gr = &g.data()[i * m..(i + 1) * m];
                    let xh = &xhat[i * m..(i + 1) * m];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..m {
                        let dxh = gr[j] * vg.data()[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                        ggamma[j] += gr[j] * xh[j];
                        gbeta[j] += gr[j];
                    }
                    mean_dxhat /= m as f64;
                    mean_dxhat_xhat /= m as f64;
                    for j in 0..m {
                        let dxh = gr[j] * vg.data()[j];
                        gx[i * m + j] = inv_std[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
                emit(x.0, Tensor::new(vec![n, m], gx).unwrap());
                emit(gamma.0, Tensor::new(vec![m], ggamma).unwrap());
                emit(beta.0, Tensor::new(vec![m], gbeta).unwrap());
            })),
        )
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let va = self.rc(a);
        let s: f64 = va.data().iter().sum();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g, emit| {
                emit(a.0, Tensor::full(va.shape().to_vec(), g.data()[0]));
            })),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column means of `x:[n,m]` → `[m]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = self.rc(x);
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        let mut cs = kn::colsum(&vx);
        cs.scale_assign(1.0 / n as f64);
        self.push(
            cs,
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        gd[i * m + j] = g.data()[j] / n as f64;
                    }
                }
                emit(x.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Stable log-sum-exp over a 1-D vector → scalar.
    pub fn lse(&mut self, x: Var) -> Var {
        let vx = self.rc(x);
        assert_eq!(vx.rank(), 1, "lse expects a vector");
        let mx = vx.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = vx.data().iter().map(|v| (v - mx).exp()).sum();
        let out = mx + z.ln();
        self.push(
            Tensor::scalar(out),
            Some(Box::new(move |g, emit| {
                let gd = vx
                    .data()
                    .iter()
                    .map(|v| g.data()[0] * (v - mx).exp() / z)
                    .collect();
                emit(x.0, Tensor::new(vec![vx.numel()], gd).unwrap());
            })),
        )
    }

    // ---- structure ----

    /// Stack 1-D vectors of equal width into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let m = self.value(rows[0]).numel();
        let n = rows.len();
        let mut data = Vec::with_capacity(n * m);
        for &r in rows {
            let v = self.value(r);
            assert_eq!(v.numel(), m, "stack_rows width mismatch");
            data.extend_from_slice(v.data());
        }
        let rows: Vec<usize> = rows.iter().map(|v| v.0).collect();
        self.push(
            Tensor::new(vec![n, m], data).unwrap(),
            Some(Box::new(move |g, emit| {
                for (i, &r) in rows.iter().enumerate() {
                    emit(
                        r,
                        Tensor::new(vec![m], g.data()[i * m..(i + 1) * m].to_vec()).unwrap(),
                    );
                }
            })),
        )
    }

    /// Extract one element (by flat index) as a `[1]` var.
    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        let vx = self.rc(x);
        let n = vx.numel();
        assert!(i < n, "pick {i} out of {n}");
        let out = Tensor::scalar(vx.data()[i]);
        let shape = vx.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gd = Tensor::zeros(shape.clone());
                gd.data_mut()[i] = g.data()[0];
                emit(x.0, gd);
            })),
        )
    }

    /// Extract row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let vx = self.rc(x);
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert!(i < n, "row {i} out of {n}");
        let out = Tensor::new(vec![m], vx.data()[i * m..(i + 1) * m].to_vec()).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * m];
                gd[i * m..(i + 1) * m].copy_from_slice(g.data());
                emit(x.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Rows `lo..hi` of a matrix.
    pub fn rows_range(&mut self, x: Var, lo: usize, hi: usize) -> Var {
        let vx = self.rc(x);
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert!(lo < hi && hi <= n, "rows_range {lo}..{hi} of {n}");
        let out = Tensor::new(vec![hi - lo, m], vx.data()[lo * m..hi * m].to_vec()).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * m];
                gd[lo * m..hi * m].copy_from_slice(g.data());
                emit(x.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Columns `lo..hi` of a matrix.
    pub fn col_range(&mut self, x: Var, lo: usize, hi: usize) -> Var {
        let vx = self.rc(x);
        let (n, m) = (vx.shape()[0], vx.shape()[1]);
        assert!(lo < hi && hi <= m, "col_range {lo}..{hi} of {m}");
        let w = hi - lo;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&vx.data()[i * m + lo..i * m + hi]);
        }
        self.push(
            Tensor::new(vec![n, w], data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * m];
                for i in 0..n {
                    gd[i * m + lo..i * m + hi].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                emit(x.0, Tensor::new(vec![n, m], gd).unwrap());
            })),
        )
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).shape()[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(v.shape()[0], n, "concat_cols row count");
                v.shape()[1]
            })
            .collect();
        let m: usize = widths.iter().sum();
        let mut data = vec![0.0; n * m];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..n {
                data[i * m + off..i * m + off + w].copy_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push(
            Tensor::new(vec![n, m], data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut off = 0;
                for (&p, &w) in ids.iter().zip(&widths) {
                    let mut gd = vec![0.0; n * w];
                    for i in 0..n {
                        gd[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * m + off..i * m + off + w]);
                    }
                    emit(p, Tensor::new(vec![n, w], gd).unwrap());
                    off += w;
                }
            })),
        )
    }

    /// Concatenate matrices with equal widths along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).shape()[1];
        let heights: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(v.shape()[1], m, "concat_rows width");
                v.shape()[0]
            })
            .collect();
        let n: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(n * m);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push(
            Tensor::new(vec![n, m], data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut off = 0;
                for (&p, &h) in ids.iter().zip(&heights) {
                    emit(
                        p,
                        Tensor::new(vec![h, m], g.data()[off * m..(off + h) * m].to_vec()).unwrap(),
                    );
                    off += h;
                }
            })),
        )
    }

    /// Gather flat elements by index into a new shape; `-1` reads zero.
    /// Backward scatter-adds into the source.
    pub fn reindex_zero(&mut self, x: Var, idx: Rc<Vec<i64>>, out_shape: Vec<usize>) -> Var {
        let vx = self.rc(x);
        assert_eq!(idx.len(), out_shape.iter().product::<usize>());
        let data = idx
            .iter()
            .map(|&i| if i < 0 { 0.0 } else { vx.data()[i as usize] })
            .collect();
        let src_shape = vx.shape().to_vec();
        let src_len = vx.numel();
        let idx_b = Rc::clone(&idx);
        self.push(
            Tensor::new(out_shape, data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; src_len];
                for (&i, gv) in idx_b.iter().zip(g.data()) {
                    if i >= 0 {
                        gd[i as usize] += gv;
                    }
                }
                emit(x.0, Tensor::new(src_shape.clone(), gd).unwrap());
            })),
        )
    }

    /// Align-corners linear resample of `x:[n,C]` rows to `m` rows.
    pub fn linear_interp_rows(&mut self, x: Var, m: usize) -> Var {
        let vx = self.rc(x);
        let (n, c) = (vx.shape()[0], vx.shape()[1]);
        let plan = Rc::new(kn::interp_plan(n, m));
        let mut data = vec![0.0; m * c];
        for (j, tap) in plan.iter().enumerate() {
            for ch in 0..c {
                data[j * c + ch] =
                    (1.0 - tap.w) * vx.data()[tap.lo * c + ch] + tap.w * vx.data()[tap.hi * c + ch];
            }
        }
        let plan_b = Rc::clone(&plan);
        self.push(
            Tensor::new(vec![m, c], data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * c];
                for (j, tap) in plan_b.iter().enumerate() {
                    for ch in 0..c {
                        let gv = g.data()[j * c + ch];
                        gd[tap.lo * c + ch] += (1.0 - tap.w) * gv;
                        gd[tap.hi * c + ch] += tap.w * gv;
                    }
                }
                emit(x.0, Tensor::new(vec![n, c], gd).unwrap());
            })),
        )
    }

    /// Mean-pool rows of `x:[n,C]` by `factor` (n must divide evenly).
    pub fn avg_pool_rows(&mut self, x: Var, factor: usize) -> Var {
        let vx = self.rc(x);
        let (n, c) = (vx.shape()[0], vx.shape()[1]);
        assert!(factor >= 1 && n % factor == 0, "avg_pool_rows {n} by {factor}");
        let no = n / factor;
        let mut data = vec![0.0; no * c];
        for t in 0..no {
            for i in 0..factor {
                for ch in 0..c {
                    data[t * c + ch] += vx.data()[(t * factor + i) * c + ch];
                }
            }
            for ch in 0..c {
                data[t * c + ch] /= factor as f64;
            }
        }
        self.push(
            Tensor::new(vec![no, c], data).unwrap(),
            Some(Box::new(move |g, emit| {
                let mut gd = vec![0.0; n * c];
                for t in 0..no {
                    for i in 0..factor {
                        for ch in 0..c {
                            gd[(t * factor + i) * c + ch] = g.data()[t * c + ch] / factor as f64;
                        }
                    }
                }
                emit(x.0, Tensor::new(vec![n, c], gd).unwrap());
            })),
        )
    }

    /// Scaled dot-product attention. `mask`, when present, is added to the
    /// score matrix before the softmax (use large negatives to forbid pairs).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&Tensor>) -> Var {
        let d = self.value(q).shape()[1];
        assert_eq!(self.value(k).shape()[1], d, "attention key width");
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt);
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let masked = match mask {
            Some(m) => self.add_const(scaled, m),
            None => scaled,
        };
        let attn = self.softmax_rows(masked);
        self.matmul(attn, v)
    }
}

/// A tape bound to a parameter store: parameters become leaves on first use
/// and their gradients can be collected after `backward`.
pub struct Session<'p> {
    tape: Tape,
    params: &'p ParamStore,
    bound: IndexMap<String, Var>,
    cache: HashMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            params,
            bound: IndexMap::new(),
            cache: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.params
    }

    /// Leaf var for a named parameter. Panics if the parameter is missing —
    /// models materialize all their parameters at construction time.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.cache.get(name) {
            return v;
        }
        let t = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let v = self.tape.leaf(t);
        self.cache.insert(name.to_string(), v);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Gradients of `loss` with respect to every bound parameter, in binding
    /// order. Unreached parameters yield zero tensors.
    pub fn param_grads(&self, loss: Var) -> IndexMap<String, Tensor> {
        let grads = self.tape.backward(loss);
        let mut out = IndexMap::new();
        for (name, &var) in &self.bound {
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.tape.value(var).shape().to_vec()));
            out.insert(name.clone(), g);
        }
        out
    }
}

impl<'p> Deref for Session<'p> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl<'p> DerefMut for Session<'p> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
