//! Expert encoder: the full-resolution trunk, applied to whichever clips the
//! saliency selection hands it.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Var};

use super::trunk::Trunk;
use super::{ClipFeatureSeq, EncoderConfig, FeatureSource, RawClip};

#[derive(Debug, Clone)]
pub struct ExpertModel {
    trunk: Trunk,
}

impl ExpertModel {
    /// `cfg.pool_factor` is ignored: the expert never pools.
    pub fn new(prefix: impl Into<String>, cfg: EncoderConfig) -> Self {
        ExpertModel {
            trunk: Trunk::new(prefix, cfg, false),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        self.trunk.config()
    }

    pub fn init(&self, ps: &mut ParamStore) {
        self.trunk.init(ps);
    }

    /// `[M, C]` features for the given clips, in input order.
    pub fn encode_var(&self, s: &mut Session, clips: &[&RawClip]) -> Result<Var> {
        if clips.is_empty() {
            return Err(Error::InvalidArg("expert got no clips".into()));
        }
        let rows: Vec<Var> = clips.iter().map(|c| self.trunk.encode_clip(s, c)).collect();
        Ok(s.stack_rows(&rows))
    }

    pub fn encode(&self, ps: &ParamStore, clips: &[&RawClip]) -> Result<ClipFeatureSeq> {
        self.encode_with_origin(ps, clips, (0..clips.len()).collect())
    }

    /// Encode clips that originate from specific positions of a video.
    pub fn encode_with_origin(
        &self,
        ps: &ParamStore,
        clips: &[&RawClip],
        origin: Vec<usize>,
    ) -> Result<ClipFeatureSeq> {
        let mut s = Session::new(ps);
        let v = self.encode_var(&mut s, clips)?;
        let features = s.value(v).clone();
        if !features.is_finite() {
            return Err(Error::NonFinite("expert features".into()));
        }
        ClipFeatureSeq::new(features, FeatureSource::SalientPadded, origin)
    }
}
