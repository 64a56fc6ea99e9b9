//! Saliency scoring, top-c% clip selection, and the sidekick training losses.
//!
//! The saliency score of clip `t` against a query is the raw inner product
//! of its dense feature with the query CLS vector. The same inner product
//! (divided by a temperature) drives the training losses, so the geometry
//! learned in training is exactly the one used at selection time.

use std::rc::Rc;

use indexmap::IndexMap;

use crate::encoders::{ClipFeatureSeq, QueryFeatures, RawClip, SidekickModel, TextModel};
use crate::error::{Error, Result};
use crate::numerics::{Optimizer, ParamStore, Session, Tensor, Var};

/// Temperature applied to inner products inside the contrastive loss.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Per-query saliency scores with the selected clip set.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// Raw inner-product scores, length `T`.
    pub scores: Tensor,
    /// Selection ratio `c` in `(0, 1]`.
    pub ratio: f64,
    /// Selected clip indices, ascending, `ceil(c·T)` of them.
    pub selected: Vec<usize>,
}

impl SaliencyMap {
    pub fn from_scores(scores: Tensor, ratio: f64) -> Result<Self> {
        let selected = select_top_c(scores.data(), ratio)?;
        Ok(SaliencyMap {
            scores,
            ratio,
            selected,
        })
    }
}

/// `scores[t] = dot(F_D[t], q_cls)`, unnormalized.
pub fn compute_saliency(dense: &ClipFeatureSeq, query: &QueryFeatures) -> Result<Tensor> {
    let c = dense.width();
    if query.width() != c {
        return Err(Error::shape(
            "compute_saliency",
            format!("features have width {c}, query CLS has {}", query.width()),
        ));
    }
    let t = dense.len();
    let mut scores = Vec::with_capacity(t);
    for i in 0..t {
        let row = &dense.features.data()[i * c..(i + 1) * c];
        scores.push(row.iter().zip(query.cls.data()).map(|(a, b)| a * b).sum());
    }
    Ok(Tensor::vector(&scores))
}

/// Indices of the `ceil(c·T)` highest scores; ties break toward the lower
/// index; result ascending.
pub fn select_top_c(scores: &[f64], c: f64) -> Result<Vec<usize>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArg(format!("selection ratio {c} outside (0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("saliency scores".into()));
    }
    let t = scores.len();
    let m = ((c * t as f64).ceil() as usize).clamp(1, t);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(m).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Positive/negative clip assignment for one query.
#[derive(Debug, Clone)]
pub struct ContrastivePairing {
    /// Clips overlapping the ground-truth span by at least half a clip.
    pub positives: Vec<usize>,
    /// Every other clip of the same video.
    pub negatives: Vec<usize>,
}

impl ContrastivePairing {
    /// Derive the pairing from a ground-truth span over `t` clips.
    pub fn from_span(span: (f64, f64), t: usize) -> Result<Self> {
        if span.1 <= span.0 {
            return Err(Error::InvalidArg(format!("degenerate span {span:?}")));
        }
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for clip in 0..t {
            let overlap = (span.1.min(clip as f64 + 1.0) - span.0.max(clip as f64)).max(0.0);
            if overlap >= 0.5 {
                positives.push(clip);
            } else {
                negatives.push(clip);
            }
        }
        if positives.is_empty() {
            return Err(Error::InvalidArg(format!(
                "span {span:?} covers no clip by >= 0.5"
            )));
        }
        Ok(ContrastivePairing {
            positives,
            negatives,
        })
    }
}

/// Counters emitted by the loss builders.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    /// Query-side terms skipped because the query had no negative clips.
    pub skipped_no_negatives: usize,
}

/// Symmetric InfoNCE over a batch.
///
/// Text side: each positive clip feature competes against the same video's
/// negative clips for its query CLS. Video side: each positive clip competes
/// for its own query CLS against the other queries' CLS vectors in the batch.
/// The result is the mean of the two sides.
pub fn saliency_loss_var(
    s: &mut Session,
    dense: &[Var],
    query_cls: &[Var],
    pairings: &[ContrastivePairing],
    temperature: f64,
) -> Result<(Var, LossStats)> {
    if dense.len() != query_cls.len() || dense.len() != pairings.len() {
        return Err(Error::InvalidArg(format!(
            "batch arity mismatch: {} videos, {} queries, {} pairings",
            dense.len(),
            query_cls.len(),
            pairings.len()
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidArg(format!("temperature {temperature} must be > 0")));
    }
    let b = dense.len();
    let mut stats = LossStats::default();

    // Text side: per query, scores of every clip against its CLS.
    let mut text_terms: Vec<Var> = Vec::new();
    let mut clip_scores: Vec<Var> = Vec::with_capacity(b); // [1, T_i], reused below
    for i in 0..b {
        let q = s.stack_rows(&[query_cls[i]]);
        let ft = s.transpose(dense[i]);
        let scores = s.matmul(q, ft);
        let scores = s.scale(scores, 1.0 / temperature);
        clip_scores.push(scores);
        let p = &pairings[i];
        if p.negatives.is_empty() {
            stats.skipped_no_negatives += 1;
            continue;
        }
        for &pos in &p.positives {
            let mut idx: Vec<i64> = Vec::with_capacity(1 + p.negatives.len());
            idx.push(pos as i64);
            idx.extend(p.negatives.iter().map(|&n| n as i64));
            let n_logits = idx.len();
            let z = s.reindex_zero(scores, Rc::new(idx), vec![n_logits]);
            let denom = s.lse(z);
            let pos_idx = Rc::new(vec![pos as i64]);
            let pos_logit = s.reindex_zero(scores, pos_idx, vec![1]);
            text_terms.push(s.sub(denom, pos_logit));
        }
    }

    // Video side: each positive clip against every query CLS in the batch.
    let mut video_terms: Vec<Var> = Vec::new();
    if b >= 2 {
        let all_cls = s.stack_rows(query_cls); // [B, C]
        for i in 0..b {
            let p = &pairings[i];
            for &pos in &p.positives {
                let f = s.row(dense[i], pos);
                let frow = s.stack_rows(&[f]);
                let ct = s.transpose(all_cls);
                let scores = s.matmul(frow, ct); // [1, B]
                let scores = s.scale(scores, 1.0 / temperature);
                let mut idx: Vec<i64> = Vec::with_capacity(b);
                idx.push(i as i64);
                idx.extend((0..b).filter(|&j| j != i).map(|j| j as i64));
                let z = s.reindex_zero(scores, Rc::new(idx), vec![b]);
                let denom = s.lse(z);
                let pos_idx = Rc::new(vec![i as i64]);
                let pos_logit = s.reindex_zero(scores, pos_idx, vec![1]);
                video_terms.push(s.sub(denom, pos_logit));
            }
        }
    } else {
        stats.skipped_no_negatives += 1;
    }

    let mean_of = |s: &mut Session, terms: &[Var]| -> Option<Var> {
        if terms.is_empty() {
            return None;
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = s.add(acc, t);
        }
        Some(s.scale(acc, 1.0 / terms.len() as f64))
    };

    let text_mean = mean_of(s, &text_terms);
    let video_mean = mean_of(s, &video_terms);
    let loss = match (text_mean, video_mean) {
        (Some(t), Some(v)) => {
            let sum = s.add(t, v);
            s.scale(sum, 0.5)
        }
        (Some(t), None) => t,
        (None, Some(v)) => v,
        (None, None) => {
            return Err(Error::InvalidArg(
                "saliency loss has no usable terms (no negatives anywhere)".into(),
            ))
        }
    };
    Ok((loss, stats))
}

/// Mean over clips of the squared distance to (constant) expert features.
pub fn distill_loss_var(s: &mut Session, dense: Var, expert: &Tensor) -> Result<Var> {
    let shape = s.value(dense).shape().to_vec();
    if shape != expert.shape() {
        return Err(Error::shape(
            "distill_loss",
            format!("dense {:?} vs expert {:?}", shape, expert.shape()),
        ));
    }
    let t = shape[0];
    let target = s.constant(expert.clone());
    let diff = s.sub(dense, target);
    let sq = s.mul(diff, diff);
    let total = s.sum(sq);
    Ok(s.scale(total, 1.0 / t as f64))
}

/// Plain-value distillation loss for callers outside a tape.
pub fn distill_loss(dense: &ClipFeatureSeq, expert: &ClipFeatureSeq) -> Result<f64> {
    if dense.features.shape() != expert.features.shape() {
        return Err(Error::shape(
            "distill_loss",
            format!(
                "dense {:?} vs expert {:?}",
                dense.features.shape(),
                expert.features.shape()
            ),
        ));
    }
    let t = dense.len() as f64;
    let sum: f64 = dense
        .features
        .data()
        .iter()
        .zip(expert.features.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / t)
}

/// One training example for the sidekick.
pub struct SidekickExample<'a> {
    pub video: &'a [RawClip],
    pub tokens: &'a [usize],
    pub pairing: ContrastivePairing,
    /// Precomputed expert features over all `T` positions, treated as
    /// constants (no gradient reaches the expert).
    pub expert_features: &'a Tensor,
}

/// Loss weights `(w_saliency, w_distill)`.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub saliency: f64,
    pub distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            saliency: 1.0,
            distill: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub saliency_loss: f64,
    pub distill_loss: f64,
    pub total_loss: f64,
    pub skipped_no_negatives: usize,
}

/// One optimizer step on `w_sal·L_saliency + w_dist·L_distill` over a batch.
/// Aborts without touching parameters when the loss goes non-finite.
pub fn sidekick_train_step(
    ps: &mut ParamStore,
    opt: &mut Optimizer,
    sidekick: &SidekickModel,
    text: &TextModel,
    batch: &[SidekickExample],
    weights: LossWeights,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArg("empty batch".into()));
    }
    let mut sess = Session::new(ps);
    let mut dense_vars = Vec::with_capacity(batch.len());
    let mut cls_vars = Vec::with_capacity(batch.len());
    let mut pairings = Vec::with_capacity(batch.len());
    for ex in batch {
        dense_vars.push(sidekick.encode_var(&mut sess, ex.video)?);
        let (cls, _) = text.encode_var(&mut sess, ex.tokens)?;
        cls_vars.push(cls);
        pairings.push(ex.pairing.clone());
    }
    let (sal, stats) =
        saliency_loss_var(&mut sess, &dense_vars, &cls_vars, &pairings, DEFAULT_TEMPERATURE)?;
    let mut dist_terms = Vec::with_capacity(batch.len());
    for (ex, &dv) in batch.iter().zip(&dense_vars) {
        dist_terms.push(distill_loss_var(&mut sess, dv, ex.expert_features)?);
    }
    let mut dist = dist_terms[0];
    for &t in &dist_terms[1..] {
        dist = sess.add(dist, t);
    }
    let dist = sess.scale(dist, 1.0 / dist_terms.len() as f64);

    let sal_w = sess.scale(sal, weights.saliency);
    let dist_w = sess.scale(dist, weights.distill);
    let total = sess.add(sal_w, dist_w);

    let sal_val = sess.scalar_value(sal);
    let dist_val = sess.scalar_value(dist);
    let total_val = sess.scalar_value(total);
    if !total_val.is_finite() {
        return Err(Error::NonFinite(format!(
            "sidekick step loss (saliency {sal_val}, distill {dist_val})"
        )));
    }

    let grads: IndexMap<String, Tensor> = sess.param_grads(total);
    drop(sess);
    ps.zero_grads();
    for (name, g) in &grads {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        ps.accumulate_grad(name, g)?;
    }
    opt.apply(ps);
    Ok(StepStats {
        saliency_loss: sal_val,
        distill_loss: dist_val,
        total_loss: total_val,
        skipped_no_negatives: stats.skipped_no_negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FeatureSource;

    fn seq(rows: &[Vec<f64>]) -> ClipFeatureSeq {
        ClipFeatureSeq::new(
            Tensor::matrix(rows).unwrap(),
            FeatureSource::Dense,
            (0..rows.len()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn saliency_basis_and_zero_cases() {
        let fd = seq(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let q = QueryFeatures {
            cls: Tensor::vector(&[1.0, 0.0]),
            tokens: Tensor::zeros(vec![1, 2]),
        };
        assert_eq!(compute_saliency(&fd, &q).unwrap().data(), &[1.0, 0.0]);

        let q0 = QueryFeatures {
            cls: Tensor::vector(&[0.0, 0.0]),
            tokens: Tensor::zeros(vec![1, 2]),
        };
        assert_eq!(compute_saliency(&fd, &q0).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn saliency_matches_rowwise_dot_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let cls: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fd = seq(&rows);
        let q = QueryFeatures {
            cls: Tensor::vector(&cls),
            tokens: Tensor::zeros(vec![1, 3]),
        };
        let got = compute_saliency(&fd, &q).unwrap();
        for (t, row) in rows.iter().enumerate() {
            let want: f64 = row.iter().zip(&cls).map(|(a, b)| a * b).sum();
            assert_eq!(got.data()[t], want);
        }
    }

    #[test]
    fn top_c_selection_examples() {
        assert_eq!(select_top_c(&[0.9, 0.1, 0.5, 0.3], 0.5).unwrap(), vec![0, 2]);
        assert_eq!(select_top_c(&[0.1, 0.2], 1.0).unwrap(), vec![0, 1]);
        // ties break toward the lower index
        assert_eq!(select_top_c(&[0.5, 0.5, 0.1, 0.1], 0.5).unwrap(), vec![0, 1]);
        assert!(select_top_c(&[0.5], 0.0).is_err());
        assert!(select_top_c(&[0.5], -0.2).is_err());
    }

    #[test]
    fn pairing_uses_half_overlap() {
        let p = ContrastivePairing::from_span((2.0, 4.0), 6).unwrap();
        assert_eq!(p.positives, vec![2, 3]);
        assert_eq!(p.negatives, vec![0, 1, 4, 5]);
        // fractional span: clip 1 overlaps 0.6, clip 2 overlaps 0.4
        let p = ContrastivePairing::from_span((1.4, 2.4), 4).unwrap();
        assert_eq!(p.positives, vec![1]);
        assert!(ContrastivePairing::from_span((3.0, 3.0), 4).is_err());
    }

    #[test]
    fn distill_loss_examples() {
        let a = seq(&[vec![1.0, 2.0]]);
        let b = seq(&[vec![0.0, 0.0]]);
        assert_eq!(distill_loss(&a, &b).unwrap(), 5.0);
        assert_eq!(distill_loss(&a, &a).unwrap(), 0.0);

        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let want: f64 = x
            .iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 3.0;
        let got = distill_loss(&seq(&x), &seq(&y)).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn infonce_symmetric_case_is_ln2() {
        // one positive, one negative, equal similarities -> ln 2 per term
        let ps = ParamStore::new(0);
        let mut s = Session::new(&ps);
        let fd = s.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let q = s.constant(Tensor::vector(&[0.7, 0.3]));
        let pairing = ContrastivePairing {
            positives: vec![0],
            negatives: vec![1],
        };
        let (loss, _) =
            saliency_loss_var(&mut s, &[fd], &[q], std::slice::from_ref(&pairing), 0.07).unwrap();
        let got = s.scalar_value(loss);
        assert!((got - 2f64.ln()).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn infonce_saturates_to_zero() {
        let ps = ParamStore::new(0);
        let mut s = Session::new(&ps);
        // positive similarity hugely above negative
        let fd = s.constant(Tensor::matrix(&[vec![10.0], vec![-10.0]]).unwrap());
        let q = s.constant(Tensor::vector(&[1.0]));
        let pairing = ContrastivePairing {
            positives: vec![0],
            negatives: vec![1],
        };
        let (loss, _) =
            saliency_loss_var(&mut s, &[fd], &[q], std::slice::from_ref(&pairing), 0.07).unwrap();
        assert!(s.scalar_value(loss) < 1e-9);
    }

    #[test]
    fn infonce_matches_hand_evaluated_oracle() {
        // 2 queries x 3 clips, random-ish values, evaluated by hand formula
        let temp = 0.07;
        let f0 = [[0.3, -0.1], [0.8, 0.4], [-0.5, 0.2]];
        let f1 = [[0.1, 0.9], [-0.3, 0.5], [0.6, -0.7]];
        let q0 = [0.25, -0.4];
        let q1 = [-0.6, 0.35];

        let ps = ParamStore::new(0);
        let mut s = Session::new(&ps);
        let fd0 = s.constant(Tensor::matrix(&[f0[0].to_vec(), f0[1].to_vec(), f0[2].to_vec()]).unwrap());
        let fd1 = s.constant(Tensor::matrix(&[f1[0].to_vec(), f1[1].to_vec(), f1[2].to_vec()]).unwrap());
        let qv0 = s.constant(Tensor::vector(&q0));
        let qv1 = s.constant(Tensor::vector(&q1));
        let p0 = ContrastivePairing {
            positives: vec![1],
            negatives: vec![0, 2],
        };
        let p1 = ContrastivePairing {
            positives: vec![0, 2],
            negatives: vec![1],
        };
        let (loss, _) = saliency_loss_var(
            &mut s,
            &[fd0, fd1],
            &[qv0, qv1],
            &[p0.clone(), p1.clone()],
            temp,
        )
        .unwrap();
        let got = s.scalar_value(loss);

        // oracle
        let dot = |f: &[f64; 2], q: &[f64; 2]| (f[0] * q[0] + f[1] * q[1]) / temp;
        let nce = |pos: f64, negs: &[f64]| {
            let z: f64 = negs.iter().map(|n| n.exp()).sum::<f64>() + pos.exp();
            -(pos.exp() / z).ln()
        };
        let mut text_terms = Vec::new();
        // query 0: positive clip 1
        text_terms.push(nce(
            dot(&f0[1], &q0),
            &[dot(&f0[0], &q0), dot(&f0[2], &q0)],
        ));
        // query 1: positives 0 and 2
        text_terms.push(nce(dot(&f1[0], &q1), &[dot(&f1[1], &q1)]));
        text_terms.push(nce(dot(&f1[2], &q1), &[dot(&f1[1], &q1)]));
        let mut video_terms = Vec::new();
        video_terms.push(nce(dot(&f0[1], &q0), &[dot(&f0[1], &q1)]));
        video_terms.push(nce(dot(&f1[0], &q1), &[dot(&f1[0], &q0)]));
        video_terms.push(nce(dot(&f1[2], &q1), &[dot(&f1[2], &q0)]));
        let want = 0.5
            * (text_terms.iter().sum::<f64>() / text_terms.len() as f64
                + video_terms.iter().sum::<f64>() / video_terms.len() as f64);
        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
    }

    #[test]
    fn query_without_negatives_is_skipped_and_counted() {
        let ps = ParamStore::new(0);
        let mut s = Session::new(&ps);
        let fd0 = s.constant(Tensor::matrix(&[vec![1.0], vec![2.0]]).unwrap());
        let fd1 = s.constant(Tensor::matrix(&[vec![1.0], vec![2.0]]).unwrap());
        let q0 = s.constant(Tensor::vector(&[1.0]));
        let q1 = s.constant(Tensor::vector(&[-1.0]));
        let no_negs = ContrastivePairing {
            positives: vec![0, 1],
            negatives: vec![],
        };
        let with_negs = ContrastivePairing {
            positives: vec![0],
            negatives: vec![1],
        };
        let (_, stats) =
            saliency_loss_var(&mut s, &[fd0, fd1], &[q0, q1], &[no_negs, with_negs], 0.07).unwrap();
        assert_eq!(stats.skipped_no_negatives, 1);
    }
}
