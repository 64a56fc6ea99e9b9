//! Alignment, fusion, and the multi-scale pyramid.

use std::rc::Rc;

use crate::encoders::ClipFeatureSeq;
use crate::error::{Error, Result};
use crate::numerics::{Session, Tensor, Var};

use super::trunk_reexport::{block_forward, cross_block_forward};
use super::{GroundInputs, GrounderModel};

/// Scatter expert features of the selected clips to their positions; all
/// other rows are exactly zero.
pub fn pad_salient(features: &ClipFeatureSeq, selected: &[usize], t: usize) -> Result<Tensor> {
    let m = features.len();
    if selected.len() != m {
        return Err(Error::shape(
            "pad_salient",
            format!("{m} feature rows for {} selected indices", selected.len()),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidArg("selection must not be empty".into()));
    }
    let mut seen = vec![false; t];
    for &i in selected {
        if i >= t {
            return Err(Error::InvalidArg(format!("selected index {i} outside 0..{t}")));
        }
        if seen[i] {
            return Err(Error::InvalidArg(format!("duplicate selected index {i}")));
        }
        seen[i] = true;
    }
    let c = features.width();
    let mut out = Tensor::zeros(vec![t, c]);
    for (row, &pos) in selected.iter().enumerate() {
        let src = &features.features.data()[row * c..(row + 1) * c];
        out.data_mut()[pos * c..(pos + 1) * c].copy_from_slice(src);
    }
    Ok(out)
}

/// The unified `[T, 2C+1]` input: `[F_D | Ŝ_S | S]` columns.
#[derive(Debug, Clone)]
pub struct FusedFeatures {
    pub f_c: Tensor,
}

impl FusedFeatures {
    pub fn assemble(dense: &Tensor, salient: &Tensor, scores: &Tensor) -> Result<Self> {
        let (t, c) = (dense.shape()[0], dense.shape()[1]);
        if salient.shape() != [t, c] || scores.shape() != [t] {
            return Err(Error::shape(
                "FusedFeatures",
                format!(
                    "dense {:?}, salient {:?}, scores {:?}",
                    dense.shape(),
                    salient.shape(),
                    scores.shape()
                ),
            ));
        }
        let w = 2 * c + 1;
        let mut data = vec![0.0; t * w];
        for i in 0..t {
            data[i * w..i * w + c].copy_from_slice(&dense.data()[i * c..(i + 1) * c]);
            data[i * w + c..i * w + 2 * c].copy_from_slice(&salient.data()[i * c..(i + 1) * c]);
            data[i * w + 2 * c] = scores.data()[i];
        }
        Ok(FusedFeatures {
            f_c: Tensor::new(vec![t, w], data)?,
        })
    }
}

/// Additive local-attention mask: forbids pairs beyond the window and padded
/// keys. Self-attention of a padded query onto itself stays allowed so every
/// softmax row is well defined.
pub(super) fn local_attn_mask(len: usize, valid: usize, half_window: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![len, len]);
    for i in 0..len {
        for j in 0..len {
            let out_of_window = i.abs_diff(j) > half_window;
            let padded_key = j >= valid && j != i;
            if out_of_window || padded_key {
                m.set2(i, j, -1e9);
            }
        }
    }
    m
}

/// Multiplicative row mask zeroing padded positions.
pub(super) fn row_zero_mask(len: usize, valid: usize, width: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![len, width]);
    for i in 0..valid.min(len) {
        for j in 0..width {
            m.set2(i, j, 1.0);
        }
    }
    m
}

impl GrounderModel {
    /// Apply feature-ablation flags by zeroing the corresponding blocks.
    pub fn masked_inputs(&self, inputs: &GroundInputs) -> GroundInputs {
        let mut out = inputs.clone();
        if !self.cfg.use_dense {
            out.dense = Tensor::zeros(out.dense.shape().to_vec());
        }
        if !self.cfg.use_salient {
            out.salient = Tensor::zeros(out.salient.shape().to_vec());
        }
        if !self.cfg.use_scores {
            out.scores = Tensor::zeros(out.scores.shape().to_vec());
        }
        out
    }

    /// Fusion: concat → projection → query conditioning. With aggregation
    /// enabled this is one cross-attention block over the query tokens; the
    /// fallback is a per-channel sigmoid gate from the CLS vector.
    ///
    /// Returns `[padded_t, C]` with padded rows zeroed.
    pub(super) fn fuse(&self, s: &mut Session, inputs: &GroundInputs, padded_t: usize) -> Result<Var> {
        inputs.validate()?;
        let t = inputs.t();
        let c = self.cfg.d_model;
        let fused = FusedFeatures::assemble(&inputs.dense, &inputs.salient, &inputs.scores)?;
        let mut f_c = fused.f_c;
        if padded_t > t {
            let mut padded = Tensor::zeros(vec![padded_t, 2 * c + 1]);
            padded.data_mut()[..t * (2 * c + 1)].copy_from_slice(f_c.data());
            f_c = padded;
        }
        let x = s.constant(f_c);
        let (w, b) = (
            s.param(&format!("{}.fuse.w", self.prefix())),
            s.param(&format!("{}.fuse.b", self.prefix())),
        );
        let x = s.linear(x, w, b);
        let zero = row_zero_mask(padded_t, t, c);
        let x = s.mul_const(x, &zero);
        let x = if self.cfg.use_qta {
            let kv = s.constant(inputs.query.clone());
            cross_block_forward(s, &format!("{}.xattn", self.prefix()), x, kv, self.cfg.n_heads)
        } else {
            let cls = Tensor::new(vec![1, c], inputs.query.data()[..c].to_vec())?;
            let q = s.constant(cls);
            let (gw, gb) = (
                s.param(&format!("{}.qgate.w", self.prefix())),
                s.param(&format!("{}.qgate.b", self.prefix())),
            );
            let gate = s.linear(q, gw, gb);
            let gate = s.sigmoid(gate);
            let gate = s.row(gate, 0);
            s.mul_row(x, gate)
        };
        Ok(s.mul_const(x, &zero))
    }

    /// Stride-2 depthwise convolution (kernel 3) halving the temporal length.
    fn downsample(&self, s: &mut Session, x: Var, level: usize) -> Var {
        let n = s.value(x).shape()[0];
        let c = self.cfg.d_model;
        debug_assert!(n % 2 == 0);
        let n_out = n / 2;
        let w = s.param(&format!("{}.down{level}.w", self.prefix()));
        let b = s.param(&format!("{}.down{level}.b", self.prefix()));
        // taps at 2t, 2t+1, 2t+2 (zero past the end)
        let mut acc: Option<Var> = None;
        for tap in 0..3usize {
            let idx: Vec<i64> = (0..n_out)
                .flat_map(|t| {
                    let p = 2 * t + tap;
                    (0..c).map(move |ch| if p < n { (p * c + ch) as i64 } else { -1 })
                })
                .collect();
            let shifted = s.reindex_zero(x, Rc::new(idx), vec![n_out, c]);
            let wrow = s.row(w, tap);
            let term = s.mul_row(shifted, wrow);
            acc = Some(match acc {
                None => term,
                Some(a) => s.add(a, term),
            });
        }
        let y = acc.expect("three taps");
        s.add_row(y, b)
    }

    /// Build the `L+1`-level pyramid from the fused sequence. Each level is a
    /// local-window attention block; deeper levels are reached through
    /// stride-2 depthwise convs. Padded rows stay zero at every level.
    pub(super) fn build_pyramid(&self, s: &mut Session, x: Var, valid: &[usize]) -> Vec<Var> {
        let c = self.cfg.d_model;
        let half = self.cfg.window / 2;
        let mut levels = Vec::with_capacity(self.cfg.scales + 1);
        let mut cur = x;
        for l in 0..=self.cfg.scales {
            if l > 0 {
                cur = self.downsample(s, cur, l);
                let len = s.value(cur).shape()[0];
                let zero = row_zero_mask(len, valid[l], c);
                cur = s.mul_const(cur, &zero);
            }
            let len = s.value(cur).shape()[0];
            let mask = local_attn_mask(len, valid[l], half);
            cur = block_forward(s, &format!("{}.pyr{l}", self.prefix()), cur, self.cfg.n_heads, Some(&mask));
            let zero = row_zero_mask(len, valid[l], c);
            cur = s.mul_const(cur, &zero);
            levels.push(cur);
        }
        levels
    }
}
