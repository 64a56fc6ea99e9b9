//! Shared classification/regression heads, the pyramid positive-assignment
//! rule, and span decoding.

use crate::error::Result;
use crate::numerics::{Session, Var};

use super::{GroundInputs, GrounderForward, GrounderModel, MomentProposal};

impl GrounderModel {
    /// Per-level `(logits [len,1], distances [len,2])`. Distances pass
    /// through softplus so they are strictly positive, in level-stride units.
    pub(super) fn heads(&self, s: &mut Session, refined: &[Var]) -> (Vec<Var>, Vec<Var>) {
        let p = self.prefix();
        let mut logits = Vec::with_capacity(refined.len());
        let mut regs = Vec::with_capacity(refined.len());
        for &z in refined {
            let (w1, b1) = (s.param(&format!("{p}.head.cls.w1")), s.param(&format!("{p}.head.cls.b1")));
            let h = s.linear(z, w1, b1);
            let h = s.gelu(h);
            let (w2, b2) = (s.param(&format!("{p}.head.cls.w2")), s.param(&format!("{p}.head.cls.b2")));
            logits.push(s.linear(h, w2, b2));

            let (rw1, rb1) = (s.param(&format!("{p}.head.reg.w1")), s.param(&format!("{p}.head.reg.b1")));
            let hr = s.linear(z, rw1, rb1);
            let hr = s.gelu(hr);
            let (rw2, rb2) = (s.param(&format!("{p}.head.reg.w2")), s.param(&format!("{p}.head.reg.b2")));
            let d = s.linear(hr, rw2, rb2);
            regs.push(s.softplus(d));
        }
        (logits, regs)
    }

    /// Full forward pass: fuse → pyramid → refinement → heads.
    pub fn forward(&self, s: &mut Session, inputs: &GroundInputs) -> Result<GrounderForward> {
        self.cfg.validate()?;
        self.cfg.validate_for_len(inputs.t())?;
        let padded_t = self.cfg.padded_len(inputs.t());
        let valid = self.cfg.valid_lens(inputs.t());
        let x = self.fuse(s, inputs, padded_t)?;
        let levels = self.build_pyramid(s, x, &valid);
        let (refined, p_levels) = self.refine(s, &levels, &valid, padded_t);
        let (cls_logits, regs) = self.heads(s, &refined);
        Ok(GrounderForward {
            padded_t,
            valid,
            levels,
            p_levels,
            refined,
            cls_logits,
            regs,
        })
    }
}

/// Ground-truth assignment over pyramid positions.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// Per level: 0/1 labels over the valid positions.
    pub labels: Vec<Vec<f64>>,
    /// Positive positions: `(level, index, d_start, d_end)` with distances in
    /// level-stride units.
    pub positives: Vec<(usize, usize, f64, f64)>,
}

/// A level-`l` position `j` (center `j·2^l` clips) is positive when its
/// center lies inside the span and its reach `max(center−t_s, t_e−center)`
/// falls in the level's range: `(0, r0]` for level 0, `(r0·2^{l−1}, r0·2^l]`
/// above.
pub fn assign_positives(span: (f64, f64), valid: &[usize], r0: f64) -> Assignment {
    let mut labels = Vec::with_capacity(valid.len());
    let mut positives = Vec::new();
    for (l, &v) in valid.iter().enumerate() {
        let stride = (1usize << l) as f64;
        let lo = if l == 0 { 0.0 } else { r0 * (1usize << (l - 1)) as f64 };
        let hi = r0 * (1usize << l) as f64;
        let mut row = vec![0.0; v];
        for (j, slot) in row.iter_mut().enumerate() {
            let center = j as f64 * stride;
            if center < span.0 || center > span.1 {
                continue;
            }
            let reach = (center - span.0).max(span.1 - center);
            if reach > lo && reach <= hi {
                *slot = 1.0;
                positives.push((l, j, (center - span.0) / stride, (span.1 - center) / stride));
            }
        }
        labels.push(row);
    }
    Assignment { labels, positives }
}

/// Decode head outputs into scored candidate spans, clamped to `[0, T]`;
/// degenerate spans are dropped.
pub fn decode_proposals(
    s: &Session,
    fwd: &GrounderForward,
    t: usize,
) -> Vec<MomentProposal> {
    let mut out = Vec::new();
    for (l, (&logits, &regs)) in fwd.cls_logits.iter().zip(&fwd.regs).enumerate() {
        let lv = s.value(logits);
        let rv = s.value(regs);
        let stride = (1usize << l) as f64;
        for j in 0..fwd.valid[l] {
            let score = crate::numerics::sigmoid(lv.at2(j, 0));
            let center = j as f64 * stride;
            let t_start = (center - rv.at2(j, 0) * stride).max(0.0);
            let t_end = (center + rv.at2(j, 1) * stride).min(t as f64);
            if t_start < t_end {
                out.push(MomentProposal {
                    t_start,
                    t_end,
                    score,
                    level: l,
                });
            }
        }
    }
    out
}
