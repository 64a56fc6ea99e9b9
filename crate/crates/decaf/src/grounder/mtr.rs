//! Multi-scale temporal refinement: transform each level to a confidence
//! track, expand all tracks to full length, aggregate them with dilated
//! temporal convolutions, pool the result back to every scale, and concat
//! with the original level features.

use std::rc::Rc;

use crate::numerics::{ops, Session, Tensor, Var};

use super::qta::row_zero_mask;
use super::GrounderModel;

impl GrounderModel {
    /// Confidence track `p^l` for one level: shared two-layer FFN squeezed to
    /// one channel, `[len_l, 1]`.
    pub(super) fn confidence_track(&self, s: &mut Session, z: Var) -> Var {
        let p = self.prefix();
        let (w1, b1) = (s.param(&format!("{p}.mtr.p.w1")), s.param(&format!("{p}.mtr.p.b1")));
        let h = s.linear(z, w1, b1);
        let h = s.gelu(h);
        let (w2, b2) = (s.param(&format!("{p}.mtr.p.w2")), s.param(&format!("{p}.mtr.p.b2")));
        s.linear(h, w2, b2)
    }

    fn dilated_conv(&self, s: &mut Session, x: Var, layer: usize, dilation: usize) -> Var {
        let (n, cin) = {
            let v = s.value(x);
            (v.shape()[0], v.shape()[1])
        };
        let (t_out, idx) = ops::conv1d_plan(n, cin, 3, 1, dilation);
        let patches = s.reindex_zero(x, Rc::clone(&idx), vec![t_out, 3 * cin]);
        let p = self.prefix();
        let (w, b) = (
            s.param(&format!("{p}.mtr.conv{layer}.w")),
            s.param(&format!("{p}.mtr.conv{layer}.b")),
        );
        s.linear(patches, w, b)
    }

    /// Refine pyramid levels. Returns `(refined, p_levels)` where
    /// `refined[l]` is `[len_l, 2C]`. With refinement disabled the second
    /// half is zero and no confidence tracks are built.
    pub(super) fn refine(
        &self,
        s: &mut Session,
        levels: &[Var],
        valid: &[usize],
        padded_t: usize,
    ) -> (Vec<Var>, Vec<Var>) {
        let c = self.cfg.d_model;
        if !self.cfg.use_mtr {
            let refined = levels
                .iter()
                .enumerate()
                .map(|(l, &z)| {
                    let len = s.value(z).shape()[0];
                    let zeros = s.constant(Tensor::zeros(vec![len, c]));
                    let _ = l;
                    s.concat_cols(&[z, zeros])
                })
                .collect();
            return (refined, Vec::new());
        }

        let mut p_levels = Vec::with_capacity(levels.len());
        let mut expanded = Vec::with_capacity(levels.len());
        for (l, &z) in levels.iter().enumerate() {
            let p = self.confidence_track(s, z);
            p_levels.push(p);
            let up = s.linear_interp_rows(p, padded_t);
            // keep the padded tail of the expanded track at zero so the
            // aggregation convs see clean right padding
            let zero = row_zero_mask(padded_t, valid[0], 1);
            let up = s.mul_const(up, &zero);
            let _ = l;
            expanded.push(up);
        }
        let stacked = s.concat_cols(&expanded); // [padded_t, L+1]

        let mut h = stacked;
        for layer in 0..self.cfg.mtr_layers {
            let dilation = 1usize << layer;
            h = self.dilated_conv(s, h, layer, dilation);
            h = s.gelu(h);
        }

        let refined = levels
            .iter()
            .enumerate()
            .map(|(l, &z)| {
                let factor = 1usize << l;
                let mut u = if factor == 1 { h } else { s.avg_pool_rows(h, factor) };
                let len = s.value(u).shape()[0];
                let zero = row_zero_mask(len, valid[l], c);
                u = s.mul_const(u, &zero);
                s.concat_cols(&[z, u])
            })
            .collect();
        (refined, p_levels)
    }
}
