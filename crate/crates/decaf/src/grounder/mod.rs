//! Grounding head: query-aware temporal aggregation, a multi-scale pyramid
//! with local attention, multi-scale temporal refinement, and shared
//! classification/regression heads decoded through Soft-NMS.

mod heads;
mod losses;
mod mtr;
mod nms;
mod qta;
mod train;

pub use heads::{assign_positives, Assignment};
pub use losses::{diou_loss, focal_loss};
pub use nms::soft_nms;
pub use qta::{pad_salient, FusedFeatures};
pub use train::{grounder_train_step, GrounderExample, GroundStepStats};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor, Var};

use self::trunk_reexport::init_block;

// The grounder reuses the encoder block machinery.
pub(crate) mod trunk_reexport {
    pub(crate) use crate::encoders::trunk_internals::{block_forward, cross_block_forward, init_block};
}

/// One candidate moment in clip units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentProposal {
    pub t_start: f64,
    pub t_end: f64,
    /// Confidence in `[0, 1]`.
    pub score: f64,
    /// Pyramid level the proposal decoded from.
    pub level: usize,
}

impl MomentProposal {
    pub fn span(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }
}

/// Per-query inputs to the grounder; all features are precomputed constants.
#[derive(Debug, Clone)]
pub struct GroundInputs {
    /// Dense sidekick features `[T, C]`.
    pub dense: Tensor,
    /// Expert features aligned to clip positions, zero rows elsewhere `[T, C]`.
    pub salient: Tensor,
    /// Saliency scores `[T]`.
    pub scores: Tensor,
    /// Query features `[1+N, C]`, CLS first.
    pub query: Tensor,
}

impl GroundInputs {
    pub fn t(&self) -> usize {
        self.dense.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.dense.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (t, c) = (self.t(), self.width());
        if self.salient.shape() != [t, c] {
            return Err(Error::shape(
                "GroundInputs",
                format!("salient {:?} vs dense {:?}", self.salient.shape(), self.dense.shape()),
            ));
        }
        if self.scores.shape() != [t] {
            return Err(Error::shape(
                "GroundInputs",
                format!("scores {:?} for {t} clips", self.scores.shape()),
            ));
        }
        if self.query.rank() != 2 || self.query.shape()[1] != c || self.query.shape()[0] < 2 {
            return Err(Error::shape(
                "GroundInputs",
                format!("query {:?} (want [1+N, {c}], N >= 1)", self.query.shape()),
            ));
        }
        Ok(())
    }
}

/// Grounder architecture and inference knobs.
#[derive(Debug, Clone)]
pub struct GrounderConfig {
    /// Feature width `C`; must match the encoders.
    pub d_model: usize,
    pub n_heads: usize,
    /// Pyramid scales `L`; the pyramid holds `L+1` levels.
    pub scales: usize,
    /// Local attention window in positions (total width, odd).
    pub window: usize,
    /// Dilated temporal-convolution layers in the refinement stack.
    pub mtr_layers: usize,
    /// Base assignment range in clips: level 0 owns reaches `(0, r0]`.
    pub r0: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Weight of the span-regression loss.
    pub lambda_diou: f64,
    pub nms_sigma: f64,
    pub nms_score_floor: f64,
    /// Proposals emitted per query.
    pub top_k: usize,
    /// Candidates kept before Soft-NMS.
    pub pre_nms: usize,
    // feature and component ablations
    pub use_dense: bool,
    pub use_salient: bool,
    pub use_scores: bool,
    pub use_qta: bool,
    pub use_mtr: bool,
}

impl GrounderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.scales < 1 {
            return err("pyramid needs at least one downsampled scale".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.window % 2 == 0 {
            return err(format!("local window {} must be odd", self.window));
        }
        if self.mtr_layers == 0 || self.mtr_layers > 16 {
            return err(format!("mtr_layers {} outside 1..=16", self.mtr_layers));
        }
        if self.top_k == 0 || self.pre_nms < self.top_k {
            return err(format!(
                "need pre_nms >= top_k >= 1, got {}/{}",
                self.pre_nms, self.top_k
            ));
        }
        if !(self.use_dense || self.use_salient) {
            return err("at least one of dense/salient features must be enabled".into());
        }
        Ok(())
    }

    /// Length after right zero-padding to a multiple of `2^L`.
    pub fn padded_len(&self, t: usize) -> usize {
        let unit = 1usize << self.scales;
        t.div_ceil(unit) * unit
    }

    /// Valid (unpadded) length at each level.
    pub fn valid_lens(&self, t: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.scales + 1);
        let mut cur = t;
        v.push(cur);
        for _ in 0..self.scales {
            cur = cur.div_ceil(2);
            v.push(cur);
        }
        v
    }

    /// The refinement expansion needs at least two positions at the top
    /// level, i.e. `T > 2^L`.
    pub fn validate_for_len(&self, t: usize) -> Result<()> {
        if self.padded_len(t) >> self.scales < 2 {
            return Err(Error::Config(format!(
                "video of {t} clips is too short for {} pyramid scales",
                self.scales
            )));
        }
        Ok(())
    }
}

/// Values snapshot of the pyramid, for inspection and shape tests.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    /// `Z^l`, one `[len_l, C]` tensor per level.
    pub levels: Vec<Tensor>,
    /// `p^l` confidence tracks `[len_l]` (empty when refinement is off).
    pub confidence: Vec<Tensor>,
    /// `Z^l_refine`, `[len_l, 2C]`.
    pub refined: Vec<Tensor>,
    /// Valid positions per level; the rest is padding.
    pub valid: Vec<usize>,
    pub padded_t: usize,
}

/// Tape handles produced by one grounder forward pass.
pub struct GrounderForward {
    pub padded_t: usize,
    pub valid: Vec<usize>,
    pub levels: Vec<Var>,
    /// `p^l` `[len_l, 1]` vars; empty when refinement is off.
    pub p_levels: Vec<Var>,
    pub refined: Vec<Var>,
    pub cls_logits: Vec<Var>,
    pub regs: Vec<Var>,
}

/// The grounding model: owns parameter names under a prefix.
#[derive(Debug, Clone)]
pub struct GrounderModel {
    prefix: String,
    pub cfg: GrounderConfig,
}

impl GrounderModel {
    pub fn new(prefix: impl Into<String>, cfg: GrounderConfig) -> Self {
        GrounderModel {
            prefix: prefix.into(),
            cfg,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn init(&self, ps: &mut ParamStore) {
        let c = self.cfg.d_model;
        let p = &self.prefix;
        ps.init_linear_weight(&format!("{p}.fuse.w"), 2 * c + 1, c);
        ps.init_zeros(&format!("{p}.fuse.b"), vec![c]);
        init_block(ps, &format!("{p}.xattn"), c);
        // late-fusion gate used when query-aware aggregation is disabled
        ps.init_linear_weight(&format!("{p}.qgate.w"), c, c);
        ps.init_zeros(&format!("{p}.qgate.b"), vec![c]);
        for l in 0..=self.cfg.scales {
            init_block(ps, &format!("{p}.pyr{l}"), c);
            if l > 0 {
                ps.init_linear_weight(&format!("{p}.down{l}.w"), 3, c);
                ps.init_zeros(&format!("{p}.down{l}.b"), vec![c]);
            }
        }
        // refinement: shared confidence FFN + dilated conv stack
        ps.init_linear_weight(&format!("{p}.mtr.p.w1"), c, c);
        ps.init_zeros(&format!("{p}.mtr.p.b1"), vec![c]);
        ps.init_linear_weight(&format!("{p}.mtr.p.w2"), c, 1);
        ps.init_zeros(&format!("{p}.mtr.p.b2"), vec![1]);
        for i in 0..self.cfg.mtr_layers {
            let cin = if i == 0 { self.cfg.scales + 1 } else { c };
            ps.init_linear_weight(&format!("{p}.mtr.conv{i}.w"), 3 * cin, c);
            ps.init_zeros(&format!("{p}.mtr.conv{i}.b"), vec![c]);
        }
        // shared heads over [Z^l | U^l]
        for head in ["cls", "reg"] {
            ps.init_linear_weight(&format!("{p}.head.{head}.w1"), 2 * c, c);
            ps.init_zeros(&format!("{p}.head.{head}.b1"), vec![c]);
        }
        ps.init_linear_weight(&format!("{p}.head.cls.w2"), c, 1);
        ps.init_zeros(&format!("{p}.head.cls.b2"), vec![1]);
        ps.init_linear_weight(&format!("{p}.head.reg.w2"), c, 2);
        ps.init_zeros(&format!("{p}.head.reg.b2"), vec![2]);
    }
}
