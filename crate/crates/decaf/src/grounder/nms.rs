//! Soft-NMS with Gaussian score decay.

use crate::evalbench::iou;

use super::MomentProposal;

/// Iteratively keep the highest-scoring proposal, decay the rest by
/// `exp(−IoU²/σ)`, drop anything below `score_floor`, and emit up to `keep`.
/// The output is ordered by non-increasing (decayed) score.
pub fn soft_nms(proposals: &[MomentProposal], sigma: f64, score_floor: f64, keep: usize) -> Vec<MomentProposal> {
    let mut pool: Vec<MomentProposal> = proposals.to_vec();
    let mut out = Vec::with_capacity(keep.min(pool.len()));
    while !pool.is_empty() && out.len() < keep {
        let best = pool
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.score
                    .partial_cmp(&b.score)
                    .expect("finite scores")
                    .then(ib.cmp(ia)) // ties keep the earlier proposal
            })
            .map(|(i, _)| i)
            .expect("non-empty pool");
        let picked = pool.swap_remove(best);
        pool.retain_mut(|p| {
            let overlap = iou(p.span(), picked.span()).unwrap_or(0.0);
            p.score *= (-overlap * overlap / sigma).exp();
            p.score >= score_floor
        });
        out.push(picked);
    }
    out
}
