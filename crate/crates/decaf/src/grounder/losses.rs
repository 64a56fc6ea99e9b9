//! Focal and Distance-IoU losses, in plain-value form (reference) and as
//! tape compositions (training). The two are cross-checked in tests.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Session, Tensor, Var};

/// Class-balancing weights: `alpha` for positives, `1−alpha` for negatives.
/// An `alpha` outside `(0, 1)` disables balancing (both weights 1), which at
/// `gamma = 0` reduces the loss to plain BCE.
fn alpha_weights(alpha: f64) -> (f64, f64) {
    if alpha > 0.0 && alpha < 1.0 {
        (alpha, 1.0 - alpha)
    } else {
        (1.0, 1.0)
    }
}

/// Sigmoid focal loss over logits: summed, then divided by the positive
/// count (at least 1).
pub fn focal_loss(logits: &[f64], labels: &[bool], alpha: f64, gamma: f64) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::InvalidArg(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let (w_pos, w_neg) = alpha_weights(alpha);
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        let p = sigmoid(z);
        if y {
            total += w_pos * (1.0 - p).powf(gamma) * softplus(-z); // −ln p
        } else {
            total += w_neg * p.powf(gamma) * softplus(z); // −ln(1−p)
        }
    }
    let n_pos = labels.iter().filter(|&&y| y).count().max(1);
    Ok(total / n_pos as f64)
}

/// Tape version over per-level logit columns (`[len,1]` each) with 0/1 label
/// columns. Normalization matches [`focal_loss`].
pub fn focal_loss_var(
    s: &mut Session,
    logits: &[Var],
    labels: &[Vec<f64>],
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    if logits.len() != labels.len() {
        return Err(Error::InvalidArg(format!(
            "{} logit levels for {} label levels",
            logits.len(),
            labels.len()
        )));
    }
    let (w_pos, w_neg) = alpha_weights(alpha);
    let mut n_pos = 0usize;
    let mut terms: Vec<Var> = Vec::new();
    for (&z, lab) in logits.iter().zip(labels) {
        let len = s.value(z).shape()[0];
        if len != lab.len() {
            return Err(Error::shape(
                "focal_loss",
                format!("{len} logits vs {} labels at a level", lab.len()),
            ));
        }
        if len == 0 {
            continue;
        }
        n_pos += lab.iter().filter(|&&v| v > 0.5).count();
        let pos_mask = Tensor::new(vec![len, 1], lab.clone())?;
        let neg_mask = Tensor::new(vec![len, 1], lab.iter().map(|v| 1.0 - v).collect())?;
        let p = s.sigmoid(z);
        let one_minus_p = {
            let n = s.scale(p, -1.0);
            s.add_scalar(n, 1.0)
        };
        let neg_z = s.scale(z, -1.0);
        let ln_p = s.softplus(neg_z);
        let ln_1mp = s.softplus(z);
        let pos_focus = s.pow_scalar(one_minus_p, gamma);
        let pos_all = s.mul(pos_focus, ln_p);
        let pos_masked = s.mul_const(pos_all, &pos_mask);
        let pos_sum = s.sum(pos_masked);
        terms.push(s.scale(pos_sum, w_pos));
        let neg_focus = s.pow_scalar(p, gamma);
        let neg_all = s.mul(neg_focus, ln_1mp);
        let neg_masked = s.mul_const(neg_all, &neg_mask);
        let neg_sum = s.sum(neg_masked);
        terms.push(s.scale(neg_sum, w_neg));
    }
    let mut acc = s.constant(Tensor::scalar(0.0));
    for t in terms {
        acc = s.add(acc, t);
    }
    Ok(s.scale(acc, 1.0 / n_pos.max(1) as f64))
}

/// 1-D Distance-IoU: `1 − IoU + (center gap)² / (enclosing length)²`.
pub fn diou_loss(pred: (f64, f64), gt: (f64, f64)) -> Result<f64> {
    if pred.1 <= pred.0 || gt.1 <= gt.0 {
        return Err(Error::InvalidArg(format!(
            "degenerate span in DIoU: pred {pred:?}, gt {gt:?}"
        )));
    }
    let inter = (pred.1.min(gt.1) - pred.0.max(gt.0)).max(0.0);
    let union = (pred.1 - pred.0) + (gt.1 - gt.0) - inter;
    let iou = inter / union;
    let center_gap = (pred.0 + pred.1) / 2.0 - (gt.0 + gt.1) / 2.0;
    let hull = pred.1.max(gt.1) - pred.0.min(gt.0);
    Ok(1.0 - iou + (center_gap / hull) * (center_gap / hull))
}

/// `min(a, c)` for a scalar var and constant.
fn min_const(s: &mut Session, a: Var, c: f64) -> Var {
    let d = s.add_scalar(a, -c);
    let r = s.relu(d);
    s.sub(a, r)
}

/// `max(a, c)` for a scalar var and constant.
fn max_const(s: &mut Session, a: Var, c: f64) -> Var {
    let d = s.add_scalar(a, -c);
    let neg = s.scale(d, -1.0);
    let r = s.relu(neg);
    s.add(a, r)
}

/// Tape DIoU against a constant ground-truth span; `ts`/`te` are `[1]` vars
/// with `ts < te` guaranteed by construction (positive softplus distances).
pub fn diou_loss_var(s: &mut Session, ts: Var, te: Var, gt: (f64, f64)) -> Var {
    let min_end = min_const(s, te, gt.1);
    let max_start = max_const(s, ts, gt.0);
    let gap = s.sub(min_end, max_start);
    let inter = s.relu(gap);
    let pred_len = s.sub(te, ts);
    let gt_len = gt.1 - gt.0;
    let with_gt = s.add_scalar(pred_len, gt_len);
    let union = s.sub(with_gt, inter);
    let iou = s.div(inter, union);

    let center_sum = s.add(ts, te);
    let center = s.scale(center_sum, 0.5);
    let gap_c = s.add_scalar(center, -(gt.0 + gt.1) / 2.0);
    let gap_sq = s.mul(gap_c, gap_c);
    let hull_end = max_const(s, te, gt.1);
    let hull_start = min_const(s, ts, gt.0);
    let hull = s.sub(hull_end, hull_start);
    let hull_sq = s.mul(hull, hull);
    let penalty = s.div(gap_sq, hull_sq);

    let neg_iou = s.scale(iou, -1.0);
    let one_minus = s.add_scalar(neg_iou, 1.0);
    s.add(one_minus, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;

    #[test]
    fn focal_closed_form_point() {
        // p = 0.5 (logit 0), positive label, α=0.25, γ=2:
        // 0.25 · 0.25 · ln 2 ≈ 0.04332
        let got = focal_loss(&[0.0], &[true], 0.25, 2.0).unwrap();
        assert!((got - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-10);
        assert!((got - 0.04332).abs() < 1e-4);
    }

    #[test]
    fn focal_saturates_to_zero() {
        let got = focal_loss(&[30.0, -30.0], &[true, false], 0.25, 2.0).unwrap();
        assert!(got < 1e-10, "{got}");
    }

    #[test]
    fn focal_degenerates_to_bce() {
        // γ=0 and α outside (0,1) → plain BCE (mean over positives)
        let logits = [0.3, -1.2, 2.0];
        let labels = [true, false, true];
        let got = focal_loss(&logits, &labels, 1.0, 0.0).unwrap();
        let bce: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| if y { softplus(-z) } else { softplus(z) })
            .sum::<f64>()
            / 2.0;
        assert!((got - bce).abs() < 1e-12);
    }

    #[test]
    fn focal_var_matches_plain() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let ps = ParamStore::new(0);
        for _ in 0..20 {
            let n = rng.gen_range(1..12);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let want = focal_loss(&logits, &labels, 0.25, 2.0).unwrap();

            let mut s = Session::new(&ps);
            let z = s.constant(Tensor::new(vec![n, 1], logits.clone()).unwrap());
            let lab: Vec<f64> = labels.iter().map(|&b| b as u8 as f64).collect();
            let loss = focal_loss_var(&mut s, &[z], &[lab], 0.25, 2.0).unwrap();
            let got = s.scalar_value(loss);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn diou_examples() {
        assert_eq!(diou_loss((1.0, 3.0), (1.0, 3.0)).unwrap(), 0.0);
        // disjoint touching spans: 1 − 0 + (2/4)² = 1.25
        assert!((diou_loss((0.0, 2.0), (2.0, 4.0)).unwrap() - 1.25).abs() < 1e-12);
        // concentric spans: no center penalty
        let got = diou_loss((1.0, 5.0), (2.0, 4.0)).unwrap();
        assert!((got - (1.0 - 0.5)).abs() < 1e-12);
        assert!(diou_loss((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn diou_var_matches_plain() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let ps = ParamStore::new(0);
        for _ in 0..50 {
            let ps_start = rng.gen_range(0.0..10.0);
            let pred = (ps_start, ps_start + rng.gen_range(0.2..5.0));
            let gs = rng.gen_range(0.0..10.0);
            let gt = (gs, gs + rng.gen_range(0.5..4.0));
            let want = diou_loss(pred, gt).unwrap();
            let mut s = Session::new(&ps);
            let ts = s.constant(Tensor::scalar(pred.0));
            let te = s.constant(Tensor::scalar(pred.1));
            let loss = diou_loss_var(&mut s, ts, te, gt);
            assert!((s.scalar_value(loss) - want).abs() < 1e-10);
        }
    }
}
