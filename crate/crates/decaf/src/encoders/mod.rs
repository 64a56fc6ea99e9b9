//! Video and text encoders.
//!
//! Three encoders share one transformer trunk:
//!
//! * the *sidekick* ([`SidekickModel`]) pools its token grid early and only
//!   encodes every `tau`-th clip, reconstructing the rest with a small
//!   interpolation network, so a whole video costs a fraction of full
//!   processing;
//! * the *expert* ([`ExpertModel`]) runs the trunk at full resolution over
//!   whichever clips it is given;
//! * the text encoder ([`TextModel`]) embeds a token sequence behind a CLS
//!   slot and one self-attention block.

mod expert;
mod sidekick;
mod text;
mod trunk;

pub use expert::ExpertModel;
pub use sidekick::SidekickModel;
pub use text::TextModel;
pub use trunk::Trunk;

/// Block-level building pieces shared with the grounding head.
pub(crate) mod trunk_internals {
    pub(crate) use super::trunk::{block_forward, cross_block_forward, init_block};
}

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Frame-level clip dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ClipDims {
    pub fn shape(&self) -> Vec<usize> {
        vec![self.frames, self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }
}

/// One video clip: `[L, H, W, Cin]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawClip(Tensor);

impl RawClip {
    pub fn new(tensor: Tensor, dims: ClipDims) -> Result<Self> {
        if tensor.shape() != dims.shape().as_slice() {
            return Err(Error::shape(
                "RawClip::new",
                format!("clip is {:?}, config wants {:?}", tensor.shape(), dims.shape()),
            ));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("raw clip".into()));
        }
        Ok(RawClip(tensor))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Architecture and sampling knobs shared by the video encoders.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Transformer blocks in the trunk.
    pub n_blocks: usize,
    /// 1-based block index the pooling convolution precedes. Only the
    /// sidekick pools.
    pub pool_block_index: usize,
    /// Cubic pooling stride over the token grid; 1 disables the layer.
    pub pool_factor: usize,
    /// Temporal sampling stride: the sidekick encodes clips `0, τ, 2τ, …`.
    pub tau: usize,
    /// Feature width `C`.
    pub d_model: usize,
    pub n_heads: usize,
    /// Patch extents `(pl, ph, pw)` of the patchify layer.
    pub patch: (usize, usize, usize),
    pub clip: ClipDims,
}

impl EncoderConfig {
    /// Token-grid extents after patchify.
    pub fn grid(&self) -> (usize, usize, usize) {
        (
            self.clip.frames / self.patch.0,
            self.clip.height / self.patch.1,
            self.clip.width / self.patch.2,
        )
    }

    pub fn tokens(&self) -> usize {
        let (gl, gh, gw) = self.grid();
        gl * gh * gw
    }

    /// Flattened patch width fed to the patch projection.
    pub fn patch_dim(&self) -> usize {
        self.patch.0 * self.patch.1 * self.patch.2 * self.clip.channels
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.n_blocks == 0 {
            return err("encoder needs at least one block".into());
        }
        if self.pool_block_index == 0 || self.pool_block_index > self.n_blocks {
            return err(format!(
                "pool block index {} outside 1..={}",
                self.pool_block_index, self.n_blocks
            ));
        }
        if self.tau == 0 || self.pool_factor == 0 {
            return err("tau and pool_factor must be >= 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        let (pl, ph, pw) = self.patch;
        if pl == 0 || ph == 0 || pw == 0 {
            return err("patch extents must be positive".into());
        }
        if self.clip.frames % pl != 0 || self.clip.height % ph != 0 || self.clip.width % pw != 0 {
            return err(format!(
                "clip dims {:?} not divisible by patch {:?}",
                self.clip.shape(),
                self.patch
            ));
        }
        // Pooling acts on the post-patchify token grid, so the grid is what
        // must divide evenly.
        if self.pool_factor > 1 {
            let (gl, gh, gw) = self.grid();
            if gl % self.pool_factor != 0 || gh % self.pool_factor != 0 || gw % self.pool_factor != 0 {
                return err(format!(
                    "token grid ({gl},{gh},{gw}) not divisible by pool factor {}",
                    self.pool_factor
                ));
            }
        }
        Ok(())
    }
}

/// Source of a clip feature sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Sidekick output covering every clip.
    Dense,
    /// Expert output aligned to clip positions with zero rows elsewhere.
    SalientPadded,
}

/// `T×C` features for a video's clips.
#[derive(Debug, Clone)]
pub struct ClipFeatureSeq {
    pub features: Tensor,
    pub source: FeatureSource,
    /// Clip index each row originates from.
    pub origin: Vec<usize>,
}

impl ClipFeatureSeq {
    pub fn new(features: Tensor, source: FeatureSource, origin: Vec<usize>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape("ClipFeatureSeq", "features must be [T, C]"));
        }
        if features.shape()[0] != origin.len() {
            return Err(Error::shape(
                "ClipFeatureSeq",
                format!("{} rows vs {} origins", features.shape()[0], origin.len()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("clip features".into()));
        }
        Ok(ClipFeatureSeq {
            features,
            source,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Text-query features: CLS vector plus per-token vectors.
#[derive(Debug, Clone)]
pub struct QueryFeatures {
    pub cls: Tensor,
    pub tokens: Tensor,
}

impl QueryFeatures {
    pub fn width(&self) -> usize {
        self.cls.numel()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    /// `[1+N, C]` matrix with the CLS vector first.
    pub fn stacked(&self) -> Tensor {
        let c = self.width();
        let n = self.n_tokens();
        let mut data = Vec::with_capacity((n + 1) * c);
        data.extend_from_slice(self.cls.data());
        data.extend_from_slice(self.tokens.data());
        Tensor::new(vec![n + 1, c], data).unwrap()
    }
}

/// Indices the sidekick actually encodes: `0, τ, 2τ, …`, plus the final clip
/// when the stride missed it, so interpolation always has a right neighbor.
pub fn sampled_indices(t: usize, tau: usize) -> Vec<usize> {
    assert!(tau >= 1);
    let mut idx: Vec<usize> = (0..t).step_by(tau).collect();
    if let Some(&last) = idx.last() {
        if last != t - 1 {
            idx.push(t - 1);
        }
    }
    idx
}
