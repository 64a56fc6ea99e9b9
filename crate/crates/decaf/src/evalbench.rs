//! Metrics, baseline selectors, and the analytic compute accountant.
//!
//! Recall@Top-K with IoU follows the usual convention: a query counts as hit
//! at `(K, θ)` when any of its top-K predictions reaches IoU ≥ θ against the
//! ground truth. FLOPs are counted analytically as multiply-accumulates ×2;
//! softmax, normalization, and activation costs are ignored (sub-percent at
//! these shapes). That convention is printed in every report.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{sampled_indices, EncoderConfig};
use crate::error::{Error, Result};

/// Interval IoU for spans `(start, end)` in clip units.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if a.1 <= a.0 || b.1 <= b.0 {
        return Err(Error::InvalidArg(format!(
            "zero-length span in IoU: {a:?} vs {b:?}"
        )));
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter / union)
}

/// Recall@Top-K at IoU threshold `theta`, as a percentage. Queries without
/// predictions count as misses.
pub fn recall_at(predictions: &[Vec<(f64, f64)>], gts: &[(f64, f64)], k: usize, theta: f64) -> Result<f64> {
    if predictions.len() != gts.len() {
        return Err(Error::InvalidArg(format!(
            "{} prediction lists for {} ground truths",
            predictions.len(),
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Err(Error::InvalidArg("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for (preds, gt) in predictions.iter().zip(gts) {
        let mut hit = false;
        for p in preds.iter().take(k) {
            if iou(*p, *gt)? >= theta {
                hit = true;
                break;
            }
        }
        hits += hit as usize;
    }
    Ok(100.0 * hits as f64 / gts.len() as f64)
}

/// Recall table over a `(K, θ)` grid plus its unweighted mean.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub thetas: Vec<f64>,
    /// `cells[i][j]` = recall at `(ks[i], thetas[j])`.
    pub cells: Vec<Vec<f64>>,
    pub avg: f64,
    pub queries: usize,
}

impl EvalReport {
    pub fn compute(
        predictions: &[Vec<(f64, f64)>],
        gts: &[(f64, f64)],
        ks: &[usize],
        thetas: &[f64],
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(ks.len());
        let mut sum = 0.0;
        for &k in ks {
            let mut row = Vec::with_capacity(thetas.len());
            for &th in thetas {
                let r = recall_at(predictions, gts, k, th)?;
                sum += r;
                row.push(r);
            }
            cells.push(row);
        }
        Ok(EvalReport {
            ks: ks.to_vec(),
            thetas: thetas.to_vec(),
            cells,
            avg: sum / (ks.len() * thetas.len()) as f64,
            queries: gts.len(),
        })
    }

    pub fn cell(&self, k: usize, theta: f64) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        let j = self.thetas.iter().position(|&x| (x - theta).abs() < 1e-9)?;
        Some(self.cells[i][j])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>8}", "");
        for &th in &self.thetas {
            let _ = write!(s, "{:>10}", format!("@{th:.2}"));
        }
        let _ = writeln!(s);
        for (i, &k) in self.ks.iter().enumerate() {
            let _ = write!(s, "{:>8}", format!("R{k}"));
            for j in 0..self.thetas.len() {
                let _ = write!(s, "{:>10.2}", self.cells[i][j]);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "{:>8}{:>10.2}", "AVG", self.avg);
        let _ = writeln!(s, "queries={}", self.queries);
        s
    }

    /// Machine-readable key=value block.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (i, &k) in self.ks.iter().enumerate() {
            for (j, &th) in self.thetas.iter().enumerate() {
                let _ = writeln!(s, "recall.r{k}_{th:.2}={:.4}", self.cells[i][j]);
            }
        }
        let _ = writeln!(s, "recall.avg={:.4}", self.avg);
        let _ = writeln!(s, "queries={}", self.queries);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,theta,recall\n");
        for (i, &k) in self.ks.iter().enumerate() {
            for (j, &th) in self.thetas.iter().enumerate() {
                let _ = writeln!(s, "{k},{th},{:.4}", self.cells[i][j]);
            }
        }
        s
    }
}

/// Clips overlapping a span by any positive amount.
pub fn gt_clips(span: (f64, f64), t: usize) -> Vec<usize> {
    (0..t)
        .filter(|&c| (c as f64) < span.1 && (c as f64 + 1.0) > span.0)
        .collect()
}

/// Percentage of a query's ground-truth clips present in the selection.
pub fn selection_recall(selected: &[usize], gt_span: (f64, f64), t: usize) -> Result<f64> {
    if gt_span.1 <= gt_span.0 {
        return Err(Error::InvalidArg(format!("degenerate ground truth {gt_span:?}")));
    }
    let gt = gt_clips(gt_span, t);
    if gt.is_empty() {
        return Err(Error::InvalidArg(format!(
            "ground truth {gt_span:?} covers no clip of {t}"
        )));
    }
    let hit = gt.iter().filter(|c| selected.contains(c)).count();
    Ok(100.0 * hit as f64 / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    Random,
    Uniform,
}

/// Baseline clip selectors: seeded sampling without replacement, or evenly
/// spaced indices starting at 0. Both return exactly `ceil(c·T)` indices.
pub fn baseline_select(t: usize, c: f64, mode: BaselineMode, seed: u64) -> Result<Vec<usize>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArg(format!("selection ratio {c} outside (0, 1]")));
    }
    let m = ((c * t as f64).ceil() as usize).clamp(1, t);
    let mut picked = match mode {
        BaselineMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, t, m).into_vec()
        }
        BaselineMode::Uniform => (0..m).map(|j| j * t / m).collect(),
    };
    picked.sort_unstable();
    picked.dedup();
    debug_assert_eq!(picked.len(), m);
    Ok(picked)
}

// ---- analytic compute accounting ----

/// Multiply-accumulate count for one clip through a trunk. `pooled` mirrors
/// the sidekick's early pooling; the expert never pools.
fn trunk_macs_per_clip(cfg: &EncoderConfig, pooled: bool) -> f64 {
    let c = cfg.d_model as f64;
    let n0 = cfg.tokens() as f64;
    let pooled = pooled && cfg.pool_factor > 1;
    let f3 = (cfg.pool_factor * cfg.pool_factor * cfg.pool_factor) as f64;
    let n1 = if pooled { n0 / f3 } else { n0 };
    let mut macs = n0 * cfg.patch_dim() as f64 * c; // patchify projection
    if pooled {
        macs += n1 * (f3 * c) * c; // strided cubic conv
    }
    for b in 1..=cfg.n_blocks {
        let n = if pooled && b >= cfg.pool_block_index { n1 } else { n0 };
        macs += 4.0 * n * c * c + 2.0 * n * n * c; // attention projections + scores
        macs += 8.0 * n * c * c; // FFN with hidden 4C
    }
    macs
}

/// FLOPs (MACs ×2) for one clip.
pub fn flops_per_clip(cfg: &EncoderConfig, pooled: bool) -> f64 {
    2.0 * trunk_macs_per_clip(cfg, pooled)
}

/// Per-video FLOPs of the sidekick: sampled clips through the pooled trunk
/// plus the interpolation network for skipped positions (one shared hidden
/// evaluation per gap, one head per skipped clip).
pub fn flops_sidekick_video(cfg: &EncoderConfig, t: usize) -> f64 {
    let c = cfg.d_model as f64;
    let sampled = sampled_indices(t, cfg.tau);
    let clip_macs = trunk_macs_per_clip(cfg, true) * sampled.len() as f64;
    let mut interp_macs = 0.0;
    for pair in sampled.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > 1 {
            interp_macs += (2.0 * c) * (2.0 * c); // shared hidden layer
            interp_macs += (gap - 1) as f64 * (2.0 * c) * c; // per-offset heads
        }
    }
    2.0 * (clip_macs + interp_macs)
}

/// Per-video FLOPs of the expert over `m` clips at full resolution.
pub fn flops_expert_video(cfg: &EncoderConfig, m: usize) -> f64 {
    flops_per_clip(cfg, false) * m as f64
}

/// Full-video encoder totals `(D_full, E_full)` for composition sweeps.
#[derive(Debug, Clone, Copy)]
pub struct ComputeProfile {
    pub sidekick_full: f64,
    pub expert_full: f64,
}

impl ComputeProfile {
    pub fn measure(sidekick: &EncoderConfig, expert: &EncoderConfig, t: usize) -> Self {
        ComputeProfile {
            sidekick_full: flops_sidekick_video(sidekick, t),
            expert_full: flops_expert_video(expert, t),
        }
    }

    pub fn total(&self, c: f64) -> f64 {
        compose_total(self.sidekick_full, self.expert_full, c)
    }
}

/// Total encoder compute when the expert processes the top-c fraction:
/// `D_full + c·E_full`.
pub fn compose_total(d_full: f64, e_full: f64, c: f64) -> f64 {
    d_full + c * e_full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ClipDims;

    #[test]
    fn iou_examples() {
        assert_eq!(iou((1.0, 3.0), (1.0, 3.0)).unwrap(), 1.0);
        assert!((iou((0.0, 2.0), (1.0, 3.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou((0.0, 1.0), (5.0, 6.0)).unwrap(), 0.0);
        assert!(iou((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn recall_thresholds() {
        let preds = vec![vec![(0.0, 5.0)]]; // IoU vs (0,4): 4/5 = 0.8? no: (0,4) in (0,5): inter 4, union 5 → 0.8
        let gts = vec![(0.0, 4.0)];
        assert_eq!(recall_at(&preds, &gts, 1, 0.5).unwrap(), 100.0);
        assert_eq!(recall_at(&preds, &gts, 1, 0.9).unwrap(), 0.0);
        // missing predictions count as a miss
        let preds = vec![vec![]];
        assert_eq!(recall_at(&preds, &gts, 5, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn recall_matches_bruteforce_recount() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10;
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n {
            let s = rng.gen_range(0.0..20.0);
            gts.push((s, s + rng.gen_range(1.0..5.0)));
            let mut ranked = Vec::new();
            for _ in 0..5 {
                let ps = rng.gen_range(0.0..20.0);
                ranked.push((ps, ps + rng.gen_range(0.5..6.0)));
            }
            preds.push(ranked);
        }
        for (k, th) in [(1, 0.3), (5, 0.3), (1, 0.5), (5, 0.7)] {
            let got = recall_at(&preds, &gts, k, th).unwrap();
            // exhaustive loop oracle
            let mut hits = 0;
            for i in 0..n {
                let mut hit = false;
                for p in preds[i].iter().take(k) {
                    let inter = (p.1.min(gts[i].1) - p.0.max(gts[i].0)).max(0.0);
                    let union = (p.1 - p.0) + (gts[i].1 - gts[i].0) - inter;
                    if inter / union >= th {
                        hit = true;
                    }
                }
                hits += hit as usize;
            }
            assert_eq!(got, 100.0 * hits as f64 / n as f64);
        }
    }

    #[test]
    fn report_avg_is_unweighted_mean() {
        let preds = vec![vec![(0.0, 4.0)], vec![(10.0, 11.0)]];
        let gts = vec![(0.0, 4.0), (0.0, 4.0)];
        let rep = EvalReport::compute(&preds, &gts, &[1, 5], &[0.3, 0.5]).unwrap();
        let mean = rep.cells.iter().flatten().sum::<f64>() / 4.0;
        assert!((rep.avg - mean).abs() < 1e-12);
        assert!(rep.cell(1, 0.3).unwrap() >= 0.0);
    }

    #[test]
    fn selection_recall_extremes() {
        assert_eq!(selection_recall(&[0, 1, 2, 3], (1.0, 3.0), 8).unwrap(), 100.0);
        assert_eq!(selection_recall(&[5, 6], (1.0, 3.0), 8).unwrap(), 0.0);
        assert!(selection_recall(&[0], (2.0, 2.0), 8).is_err());
    }

    #[test]
    fn random_selection_recall_tracks_ratio() {
        // Monte-Carlo expectation oracle: E[recall] ≈ 100c within 3 sigma.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let c = 0.3;
        let trials = 600;
        let mut total = 0.0;
        for i in 0..trials {
            let t = rng.gen_range(20..60);
            let len = rng.gen_range(1..5).min(t - 1);
            let start = rng.gen_range(0..t - len);
            let span = (start as f64, (start + len) as f64);
            let sel = baseline_select(t, c, BaselineMode::Random, 1000 + i).unwrap();
            total += selection_recall(&sel, span, t).unwrap();
        }
        let mean = total / trials as f64;
        // per-query sigma is below 45 points; 3 sigma of the mean ≈ 5.5
        assert!((mean - 100.0 * c).abs() < 10.0, "mean {mean}");
    }

    #[test]
    fn baseline_spacing_and_counts() {
        assert_eq!(
            baseline_select(8, 0.5, BaselineMode::Uniform, 0).unwrap(),
            vec![0, 2, 4, 6]
        );
        let a = baseline_select(37, 0.3, BaselineMode::Random, 9).unwrap();
        let b = baseline_select(37, 0.3, BaselineMode::Random, 9).unwrap();
        assert_eq!(a, b);
        for t in [5usize, 8, 13, 37] {
            for c in [0.1, 0.3, 0.5, 1.0] {
                let want = ((c * t as f64).ceil() as usize).clamp(1, t);
                for mode in [BaselineMode::Random, BaselineMode::Uniform] {
                    let sel = baseline_select(t, c, mode, 3).unwrap();
                    assert_eq!(sel.len(), want, "t={t} c={c}");
                    assert!(sel.windows(2).all(|w| w[0] < w[1]));
                    assert!(sel.iter().all(|&i| i < t));
                }
            }
        }
    }

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig {
            n_blocks: 2,
            pool_block_index: 1,
            pool_factor: 2,
            tau: 2,
            d_model: 32,
            n_heads: 4,
            patch: (1, 4, 4),
            clip: ClipDims {
                frames: 4,
                height: 8,
                width: 8,
                channels: 3,
            },
        }
    }

    #[test]
    fn expert_to_sidekick_clip_ratio_at_least_8() {
        let side = toy_cfg();
        let mut exp = toy_cfg();
        exp.n_blocks = 4;
        exp.pool_factor = 1;
        let ratio = flops_per_clip(&exp, false) / flops_per_clip(&side, true);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn sidekick_flops_strictly_decrease_in_tau_and_pool() {
        let t = 64;
        let mut prev = f64::INFINITY;
        for tau in [1usize, 2, 3, 4, 8] {
            let mut cfg = toy_cfg();
            cfg.tau = tau;
            let f = flops_sidekick_video(&cfg, t);
            assert!(f < prev, "tau {tau}: {f} !< {prev}");
            prev = f;
        }
        let mut prev = f64::INFINITY;
        for pool in [1usize, 2] {
            let mut cfg = toy_cfg();
            cfg.pool_factor = pool;
            let f = flops_sidekick_video(&cfg, t);
            assert!(f < prev, "pool {pool}: {f} !< {prev}");
            prev = f;
        }
    }

    #[test]
    fn block_term_halves_at_tau_2() {
        // with T odd the stride lands on the last clip, so the sampled-clip
        // count is exactly ceil(T/2)
        let mut cfg = toy_cfg();
        let t = 63;
        cfg.tau = 1;
        let full = flops_sidekick_video(&cfg, t);
        cfg.tau = 2;
        let half = flops_sidekick_video(&cfg, t);
        let per_clip = flops_per_clip(&cfg, true);
        let clips_full = full / per_clip;
        let clips_half_no_interp = (half
            - 2.0 * {
                // subtract interpolation cost
                let c = cfg.d_model as f64;
                let gaps = 31.0;
                gaps * ((2.0 * c) * (2.0 * c) + (2.0 * c) * c)
            })
            / per_clip;
        assert!((clips_full - 63.0).abs() < 1e-9);
        assert!((clips_half_no_interp - 32.0).abs() < 1e-9);
    }

    #[test]
    fn pooling_shrinks_tokens_64x_at_factor_4() {
        let mut cfg = toy_cfg();
        cfg.patch = (1, 2, 2); // grid (4,4,4) = 64 tokens
        cfg.pool_factor = 4;
        assert_eq!(cfg.tokens(), 64);
        assert_eq!(cfg.tokens() / (4 * 4 * 4), 1);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn compose_total_reproduces_published_compositions() {
        assert!((compose_total(21.6, 668.2, 0.3) - 222.1).abs() < 0.1);
        assert!((compose_total(21.6, 668.2, 0.5) - 355.7).abs() < 0.1);
        assert!((compose_total(64.8, 2071.8, 0.3) - 686.3).abs() < 0.1);
        assert!((compose_total(64.8, 2071.8, 0.5) - 1100.7).abs() < 0.1);
        assert_eq!(compose_total(21.6, 668.2, 0.0), 21.6);
    }
}
