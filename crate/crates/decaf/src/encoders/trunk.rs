//! Shared transformer trunk: patchify → optional pooled block → blocks →
//! mean-pooled clip feature.

use std::rc::Rc;

use crate::numerics::{ops, ParamStore, Session, Tensor, Var};

use super::{ClipDims, EncoderConfig, RawClip};

/// Gather flattened patches from a raw clip: `[n_tokens, pl·ph·pw·Cin]`.
/// Patch pixels are ordered `(frame, row, col, channel)` row-major.
pub fn gather_patches(clip: &Tensor, dims: ClipDims, patch: (usize, usize, usize)) -> Tensor {
    let (pl, ph, pw) = patch;
    let (gl, gh, gw) = (dims.frames / pl, dims.height / ph, dims.width / pw);
    let pd = pl * ph * pw * dims.channels;
    let mut data = Vec::with_capacity(gl * gh * gw * pd);
    for a in 0..gl {
        for b in 0..gh {
            for c in 0..gw {
                for i in 0..pl {
                    for j in 0..ph {
                        for k in 0..pw {
                            let base =
                                (((a * pl + i) * dims.height + (b * ph + j)) * dims.width + (c * pw + k))
                                    * dims.channels;
                            data.extend_from_slice(&clip.data()[base..base + dims.channels]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![gl * gh * gw, pd], data).unwrap()
}

/// Register the parameters of one pre-LN transformer block under `prefix`.
pub(crate) fn init_block(ps: &mut ParamStore, prefix: &str, c: usize) {
    ps.init_ones(&format!("{prefix}.ln1.g"), vec![c]);
    ps.init_zeros(&format!("{prefix}.ln1.b"), vec![c]);
    for proj in ["q", "k", "v", "o"] {
        ps.init_linear_weight(&format!("{prefix}.attn.{proj}.w"), c, c);
        ps.init_zeros(&format!("{prefix}.attn.{proj}.b"), vec![c]);
    }
    ps.init_ones(&format!("{prefix}.ln2.g"), vec![c]);
    ps.init_zeros(&format!("{prefix}.ln2.b"), vec![c]);
    ps.init_linear_weight(&format!("{prefix}.ffn.w1"), c, 4 * c);
    ps.init_zeros(&format!("{prefix}.ffn.b1"), vec![4 * c]);
    ps.init_linear_weight(&format!("{prefix}.ffn.w2"), 4 * c, c);
    ps.init_zeros(&format!("{prefix}.ffn.b2"), vec![c]);
}

/// Multi-head attention with queries from `xq` and keys/values from `xkv`.
pub(crate) fn mha(s: &mut Session, prefix: &str, xq: Var, xkv: Var, n_heads: usize, mask: Option<&Tensor>) -> Var {
    let c = s.value(xq).shape()[1];
    let dh = c / n_heads;
    let (wq, bq) = (s.param(&format!("{prefix}.attn.q.w")), s.param(&format!("{prefix}.attn.q.b")));
    let (wk, bk) = (s.param(&format!("{prefix}.attn.k.w")), s.param(&format!("{prefix}.attn.k.b")));
    let (wv, bv) = (s.param(&format!("{prefix}.attn.v.w")), s.param(&format!("{prefix}.attn.v.b")));
    let q = s.linear(xq, wq, bq);
    let k = s.linear(xkv, wk, bk);
    let v = s.linear(xkv, wv, bv);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = s.col_range(q, lo, hi);
        let kh = s.col_range(k, lo, hi);
        let vh = s.col_range(v, lo, hi);
        heads.push(s.attention(qh, kh, vh, mask));
    }
    let cat = s.concat_cols(&heads);
    let (wo, bo) = (s.param(&format!("{prefix}.attn.o.w")), s.param(&format!("{prefix}.attn.o.b")));
    s.linear(cat, wo, bo)
}

/// Pre-LN transformer block with self-attention.
pub(crate) fn block_forward(s: &mut Session, prefix: &str, x: Var, n_heads: usize, mask: Option<&Tensor>) -> Var {
    let (g1, b1) = (s.param(&format!("{prefix}.ln1.g")), s.param(&format!("{prefix}.ln1.b")));
    let h = s.layer_norm(x, g1, b1, 1e-5);
    let a = mha(s, prefix, h, h, n_heads, mask);
    let x = s.add(x, a);
    ffn_residual(s, prefix, x)
}

/// Pre-LN cross-attention block: queries from `x`, keys/values from `kv`.
pub(crate) fn cross_block_forward(s: &mut Session, prefix: &str, x: Var, kv: Var, n_heads: usize) -> Var {
    let (g1, b1) = (s.param(&format!("{prefix}.ln1.g")), s.param(&format!("{prefix}.ln1.b")));
    let h = s.layer_norm(x, g1, b1, 1e-5);
    let a = mha(s, prefix, h, kv, n_heads, None);
    let x = s.add(x, a);
    ffn_residual(s, prefix, x)
}

fn ffn_residual(s: &mut Session, prefix: &str, x: Var) -> Var {
    let (g2, b2) = (s.param(&format!("{prefix}.ln2.g")), s.param(&format!("{prefix}.ln2.b")));
    let h = s.layer_norm(x, g2, b2, 1e-5);
    let (w1, bb1) = (s.param(&format!("{prefix}.ffn.w1")), s.param(&format!("{prefix}.ffn.b1")));
    let f = s.linear(h, w1, bb1);
    let f = s.gelu(f);
    let (w2, bb2) = (s.param(&format!("{prefix}.ffn.w2")), s.param(&format!("{prefix}.ffn.b2")));
    let f = s.linear(f, w2, bb2);
    s.add(x, f)
}

/// Clip encoder trunk. The sidekick enables `pooled`; the expert never pools.
#[derive(Debug, Clone)]
pub struct Trunk {
    prefix: String,
    cfg: EncoderConfig,
    pooled: bool,
}

impl Trunk {
    pub fn new(prefix: impl Into<String>, cfg: EncoderConfig, pooled: bool) -> Self {
        let pooled = pooled && cfg.pool_factor > 1;
        Trunk {
            prefix: prefix.into(),
            cfg,
            pooled,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn pooled(&self) -> bool {
        self.pooled
    }

    pub fn init(&self, ps: &mut ParamStore) {
        let c = self.cfg.d_model;
        let p = &self.prefix;
        ps.init_linear_weight(&format!("{p}.patch.w"), self.cfg.patch_dim(), c);
        ps.init_zeros(&format!("{p}.patch.b"), vec![c]);
        let tokens = self.cfg.tokens();
        let limit = (6.0 / (tokens + c) as f64).sqrt();
        ps.init_uniform(&format!("{p}.pos"), vec![tokens, c], limit);
        if self.pooled {
            let f = self.cfg.pool_factor;
            ps.init_linear_weight(&format!("{p}.pool.w"), f * f * f * c, c);
            ps.init_zeros(&format!("{p}.pool.b"), vec![c]);
        }
        for b in 0..self.cfg.n_blocks {
            init_block(ps, &format!("{p}.block{b}"), c);
        }
    }

    /// Encode one clip to a `[C]` feature vector on tape.
    pub fn encode_clip(&self, s: &mut Session, clip: &RawClip) -> Var {
        let p = &self.prefix;
        let patches = gather_patches(clip.tensor(), self.cfg.clip, self.cfg.patch);
        let x = s.constant(patches);
        let (pw, pb) = (s.param(&format!("{p}.patch.w")), s.param(&format!("{p}.patch.b")));
        let mut x = s.linear(x, pw, pb);
        let pos = s.param(&format!("{p}.pos"));
        x = s.add(x, pos);
        let mut grid = self.cfg.grid();
        for b in 0..self.cfg.n_blocks {
            if self.pooled && b + 1 == self.cfg.pool_block_index {
                x = self.pool(s, x, &mut grid);
            }
            x = block_forward(s, &format!("{p}.block{b}"), x, self.cfg.n_heads, None);
        }
        s.mean_rows(x)
    }

    /// Strided cubic convolution over the token grid; kernel = stride = the
    /// pooling factor, so token count shrinks by `factor³`.
    fn pool(&self, s: &mut Session, x: Var, grid: &mut (usize, usize, usize)) -> Var {
        let c = self.cfg.d_model;
        let f = self.cfg.pool_factor;
        let (out_grid, idx) = ops::pool3d_plan(grid.0, grid.1, grid.2, c, f);
        let n_out = out_grid.0 * out_grid.1 * out_grid.2;
        let patches = s.reindex_zero(x, Rc::clone(&idx), vec![n_out, f * f * f * c]);
        *grid = out_grid;
        let (w, b) = (
            s.param(&format!("{}.pool.w", self.prefix)),
            s.param(&format!("{}.pool.b", self.prefix)),
        );
        s.linear(patches, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ClipDims;

    fn dims() -> ClipDims {
        ClipDims {
            frames: 4,
            height: 8,
            width: 8,
            channels: 3,
        }
    }

    #[test]
    fn patch_count_law() {
        let clip = Tensor::zeros(dims().shape());
        let p = gather_patches(&clip, dims(), (1, 4, 4));
        assert_eq!(p.shape(), &[16, 48]);
    }

    #[test]
    fn averaging_pool_kernel_preserves_constants() {
        use crate::numerics::{ops, ParamStore, Session};
        // cubic pooling with an averaging kernel conserves a constant field
        let (gl, gh, gw, c, f) = (4usize, 2usize, 2usize, 3usize, 2usize);
        let (out_grid, idx) = ops::pool3d_plan(gl, gh, gw, c, f);
        let n_out = out_grid.0 * out_grid.1 * out_grid.2;
        let taps = f * f * f;
        let mut w = Tensor::zeros(vec![taps * c, c]);
        for t in 0..taps {
            for ch in 0..c {
                w.set2(t * c + ch, ch, 1.0 / taps as f64);
            }
        }
        let ps = ParamStore::new(0);
        let mut s = Session::new(&ps);
        let x = s.constant(Tensor::full(vec![gl * gh * gw, c], 2.5));
        let patches = s.reindex_zero(x, idx, vec![n_out, taps * c]);
        let wv = s.constant(w);
        let y = s.matmul(patches, wv);
        assert!(s.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn patch_gather_matches_index_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let d = dims();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let clip = Tensor::new(d.shape(), (0..d.pixels()).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let (pl, ph, pw) = (1usize, 4usize, 4usize);
        let got = gather_patches(&clip, d, (pl, ph, pw));
        let (gh, gw) = (d.height / ph, d.width / pw);
        // explicit index oracle over every token and patch slot
        for a in 0..d.frames / pl {
            for b in 0..gh {
                for c in 0..gw {
                    let token = (a * gh + b) * gw + c;
                    let mut slot = 0;
                    for i in 0..pl {
                        for j in 0..ph {
                            for k in 0..pw {
                                for ch in 0..d.channels {
                                    let l = a * pl + i;
                                    let y = b * ph + j;
                                    let x = c * pw + k;
                                    let flat = ((l * d.height + y) * d.width + x) * d.channels + ch;
                                    assert_eq!(got.at2(token, slot), clip.data()[flat]);
                                    slot += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
