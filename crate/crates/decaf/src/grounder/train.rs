//! Grounder loss assembly, the training step, and end-to-end inference.

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Optimizer, ParamStore, Session, Tensor, Var};

use super::heads::{assign_positives, decode_proposals};
use super::losses::{diou_loss_var, focal_loss_var};
use super::nms::soft_nms;
use super::{FeaturePyramid, GroundInputs, GrounderModel, MomentProposal};

impl GrounderModel {
    /// Training loss for one query: focal over every valid pyramid position
    /// (classification head plus, with refinement on, the per-level
    /// confidence tracks) and Distance-IoU over the positive positions,
    /// weighted by `lambda_diou`.
    pub fn loss_var(&self, s: &mut Session, inputs: &GroundInputs, gt: (f64, f64)) -> Result<(Var, f64, f64)> {
        if gt.1 <= gt.0 {
            return Err(Error::InvalidArg(format!("degenerate ground truth {gt:?}")));
        }
        let fwd = self.forward(s, inputs)?;
        let assignment = assign_positives(gt, &fwd.valid, self.cfg.r0);

        let mut logit_slices = Vec::with_capacity(fwd.cls_logits.len());
        for (l, &z) in fwd.cls_logits.iter().enumerate() {
            logit_slices.push(s.rows_range(z, 0, fwd.valid[l]));
        }
        let mut focal = focal_loss_var(
            s,
            &logit_slices,
            &assignment.labels,
            self.cfg.focal_alpha,
            self.cfg.focal_gamma,
        )?;
        if self.cfg.use_mtr {
            let mut p_slices = Vec::with_capacity(fwd.p_levels.len());
            for (l, &p) in fwd.p_levels.iter().enumerate() {
                p_slices.push(s.rows_range(p, 0, fwd.valid[l]));
            }
            let aux = focal_loss_var(
                s,
                &p_slices,
                &assignment.labels,
                self.cfg.focal_alpha,
                self.cfg.focal_gamma,
            )?;
            focal = s.add(focal, aux);
        }

        let diou = if assignment.positives.is_empty() {
            s.constant(Tensor::scalar(0.0))
        } else {
            let mut terms = Vec::with_capacity(assignment.positives.len());
            for &(l, j, _, _) in &assignment.positives {
                let stride = (1usize << l) as f64;
                let row = s.row(fwd.regs[l], j);
                let ds = s.pick(row, 0);
                let de = s.pick(row, 1);
                let neg = s.scale(ds, -stride);
                let ts = s.add_scalar(neg, j as f64 * stride);
                let pos = s.scale(de, stride);
                let te = s.add_scalar(pos, j as f64 * stride);
                terms.push(diou_loss_var(s, ts, te, gt));
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = s.add(acc, t);
            }
            s.scale(acc, 1.0 / terms.len() as f64)
        };

        let focal_val = s.scalar_value(focal);
        let diou_val = s.scalar_value(diou);
        let weighted = s.scale(diou, self.cfg.lambda_diou);
        let total = s.add(focal, weighted);
        Ok((total, focal_val, diou_val))
    }

    /// Full inference: forward, decode, rank, Soft-NMS, top-K.
    pub fn ground(&self, ps: &ParamStore, inputs: &GroundInputs) -> Result<Vec<MomentProposal>> {
        let mut s = Session::new(ps);
        let fwd = self.forward(&mut s, inputs)?;
        let mut cands = decode_proposals(&s, &fwd, inputs.t());
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then(a.t_start.partial_cmp(&b.t_start).expect("finite starts"))
                .then(a.t_end.partial_cmp(&b.t_end).expect("finite ends"))
        });
        cands.truncate(self.cfg.pre_nms);
        Ok(soft_nms(&cands, self.cfg.nms_sigma, self.cfg.nms_score_floor, self.cfg.top_k))
    }

    /// Values snapshot of the pyramid for inspection and tests.
    pub fn pyramid_snapshot(&self, ps: &ParamStore, inputs: &GroundInputs) -> Result<FeaturePyramid> {
        let mut s = Session::new(ps);
        let fwd = self.forward(&mut s, inputs)?;
        let levels = fwd.levels.iter().map(|&v| s.value(v).clone()).collect();
        let confidence = fwd
            .p_levels
            .iter()
            .map(|&v| {
                let t = s.value(v);
                Tensor::vector(t.data())
            })
            .collect();
        let refined = fwd.refined.iter().map(|&v| s.value(v).clone()).collect();
        Ok(FeaturePyramid {
            levels,
            confidence,
            refined,
            valid: fwd.valid,
            padded_t: fwd.padded_t,
        })
    }
}

/// One training example.
pub struct GrounderExample {
    pub inputs: GroundInputs,
    pub gt: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct GroundStepStats {
    pub focal: f64,
    pub diou: f64,
    pub total: f64,
}

/// One optimizer step over a batch. Per-example tapes run in parallel; the
/// gradient reduction is ordered by batch index, so results do not depend on
/// the worker count.
pub fn grounder_train_step(
    ps: &mut ParamStore,
    opt: &mut Optimizer,
    model: &GrounderModel,
    batch: &[GrounderExample],
) -> Result<GroundStepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("empty batch".into()));
    }
    let shared: &ParamStore = ps;
    let results: Vec<Result<(f64, f64, f64, IndexMap<String, Tensor>)>> = batch
        .par_iter()
        .map(|ex| {
            let mut s = Session::new(shared);
            let (loss, focal, diou) = model.loss_var(&mut s, &ex.inputs, ex.gt)?;
            let total = s.scalar_value(loss);
            if !total.is_finite() {
                return Err(Error::NonFinite("grounder step loss".into()));
            }
            Ok((focal, diou, total, s.param_grads(loss)))
        })
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut stats = GroundStepStats {
        focal: 0.0,
        diou: 0.0,
        total: 0.0,
    };
    ps.zero_grads();
    for r in results {
        let (focal, diou, total, grads) = r?;
        stats.focal += focal * scale;
        stats.diou += diou * scale;
        stats.total += total * scale;
        for (name, mut g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            g.scale_assign(scale);
            ps.accumulate_grad(&name, &g)?;
        }
    }
    opt.apply(ps);
    Ok(stats)
}
