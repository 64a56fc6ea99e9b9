//! Shared forward kernels used by both the tape ops and the validated
//! tensor-level API. Keeping one implementation of each avoids the two paths
//! drifting apart.

use super::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (k2, m) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

/// `a · bᵀ` for `a:[n,k]`, `b:[m,k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (m, k2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * m + j] = acc;
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

/// `aᵀ · b` for `a:[k,n]`, `b:[k,m]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = (a.shape()[0], a.shape()[1]);
    let (k2, m) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = &a.data()[p * n..(p + 1) * n];
        let brow = &b.data()[p * m..(p + 1) * m];
        for i in 0..n {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

pub fn colsum(x: &Tensor) -> Tensor {
    let (n, m) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            out[j] += x.data()[i * m + j];
        }
    }
    Tensor::new(vec![m], out).unwrap()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (n, m) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &x.data()[i * m..(i + 1) * m];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..m {
            let e = (row[j] - mx).exp();
            out[i * m + j] = e;
            z += e;
        }
        for j in 0..m {
            out[i * m + j] /= z;
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

/// One output row of an align-corners linear resample.
#[derive(Debug, Clone, Copy)]
pub struct InterpTap {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

/// Align-corners mapping: output `j` reads source position `j·(n−1)/(m−1)`.
/// Requires `n ≥ 2` and `m ≥ 2`; endpoints land exactly on `0` and `n−1`.
pub fn interp_plan(n: usize, m: usize) -> Vec<InterpTap> {
    assert!(n >= 2 && m >= 2, "interp_plan needs n,m >= 2 (n={n}, m={m})");
    let scale = (n as f64 - 1.0) / (m as f64 - 1.0);
    (0..m)
        .map(|j| {
            let src = j as f64 * scale;
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            InterpTap {
                lo,
                hi,
                w: src - lo as f64,
            }
        })
        .collect()
}

pub fn conv1d_out_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

/// Flat gather indices for a 1-D convolution viewed as `im2col` over a
/// `[T, Cin]` input. Column layout is tap-major (`j` outer, `ci` inner) to
/// match a `[k, Cin, Cout]` kernel flattened to `[k·Cin, Cout]`. Entries of
/// `-1` denote zero padding.
pub fn conv1d_gather(t: usize, cin: usize, k: usize, stride: usize, dilation: usize) -> (usize, Vec<i64>) {
    assert!(stride >= 1 && dilation >= 1);
    let t_out = conv1d_out_len(t, stride);
    let span = (k - 1) * dilation + 1;
    let total_pad = ((t_out - 1) * stride + span).saturating_sub(t);
    let pad_left = (total_pad / 2) as i64;
    let mut idx = Vec::with_capacity(t_out * k * cin);
    for to in 0..t_out {
        for j in 0..k {
            let p = (to * stride + j * dilation) as i64 - pad_left;
            for ci in 0..cin {
                if p < 0 || p >= t as i64 {
                    idx.push(-1);
                } else {
                    idx.push(p * cin as i64 + ci as i64);
                }
            }
        }
    }
    (t_out, idx)
}

/// Flat gather indices for a cubic strided convolution (kernel = stride = `f`)
/// over a token grid `[gl·gh·gw, c]`. Column layout matches a kernel
/// `[f, f, f, C, Cout]` flattened to `[f³·C, Cout]`. Grid dims must divide by
/// `f`, so no padding occurs.
pub fn pool3d_gather(gl: usize, gh: usize, gw: usize, c: usize, f: usize) -> ((usize, usize, usize), Vec<i64>) {
    assert!(f >= 1);
    assert!(
        gl % f == 0 && gh % f == 0 && gw % f == 0,
        "grid ({gl},{gh},{gw}) not divisible by pool factor {f}"
    );
    let (ol, oh, ow) = (gl / f, gh / f, gw / f);
    let mut idx = Vec::with_capacity(ol * oh * ow * f * f * f * c);
    for a in 0..ol {
        for b in 0..oh {
            for d in 0..ow {
                for i in 0..f {
                    for j in 0..f {
                        for k in 0..f {
                            let token = ((a * f + i) * gh + (b * f + j)) * gw + (d * f + k);
                            for ci in 0..c {
                                idx.push((token * c + ci) as i64);
                            }
                        }
                    }
                }
            }
        }
    }
    ((ol, oh, ow), idx)
}

const GELU_S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_S * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_S * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_S * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Tensor::matrix(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]).unwrap();
        let b = Tensor::matrix(&[vec![2.0, 1.0], vec![-1.0, 0.0], vec![0.5, 4.0]]).unwrap();
        let y = matmul(&a, &b);
        // independent triple loop
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a.at2(i, p) * b.at2(p, j);
                }
                assert!((y.at2(i, j) - acc).abs() < 1e-12);
            }
        }
        let ynt = matmul_nt(&a, &Tensor::matrix(&[vec![2.0, -1.0, 0.5], vec![1.0, 0.0, 4.0]]).unwrap());
        assert_eq!(y, ynt);
    }

    #[test]
    fn interp_endpoints_exact() {
        let plan = interp_plan(5, 11);
        assert_eq!(plan[0].lo, 0);
        assert_eq!(plan[0].w, 0.0);
        assert_eq!(plan[10].lo, 4);
        assert_eq!(plan[10].w, 0.0);
    }

    #[test]
    fn conv1d_gather_shapes() {
        let (t_out, idx) = conv1d_gather(8, 2, 3, 2, 1);
        assert_eq!(t_out, 4);
        assert_eq!(idx.len(), 4 * 3 * 2);
        // k=1 identity never pads
        let (t_out, idx) = conv1d_gather(5, 1, 1, 1, 1);
        assert_eq!(t_out, 5);
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-12);
    }
}
