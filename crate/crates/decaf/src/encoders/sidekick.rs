//! Sidekick encoder: pooled trunk over sampled clips plus feature
//! interpolation for the clips the stride skipped.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Var};

use super::trunk::Trunk;
use super::{sampled_indices, ClipFeatureSeq, EncoderConfig, FeatureSource, RawClip};

/// Dense encoder: encodes clips `0, τ, 2τ, …` (always including the final
/// clip) through the pooled trunk and fills every skipped position with
/// `FFN([left neighbor, right neighbor])` — one shared hidden layer with a
/// dedicated output head per offset.
#[derive(Debug, Clone)]
pub struct SidekickModel {
    prefix: String,
    trunk: Trunk,
}

impl SidekickModel {
    pub fn new(prefix: impl Into<String>, cfg: EncoderConfig) -> Self {
        let prefix = prefix.into();
        let trunk = Trunk::new(prefix.clone(), cfg, true);
        SidekickModel { prefix, trunk }
    }

    pub fn config(&self) -> &EncoderConfig {
        self.trunk.config()
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn init(&self, ps: &mut ParamStore) {
        self.trunk.init(ps);
        let c = self.config().d_model;
        let tau = self.config().tau;
        if tau > 1 {
            let p = &self.prefix;
            ps.init_linear_weight(&format!("{p}.interp.w1"), 2 * c, 2 * c);
            ps.init_zeros(&format!("{p}.interp.b1"), vec![2 * c]);
            for o in 1..tau {
                ps.init_linear_weight(&format!("{p}.interp.head{o}.w"), 2 * c, c);
                ps.init_zeros(&format!("{p}.interp.head{o}.b"), vec![c]);
            }
        }
    }

    /// Dense `[T, C]` features on tape.
    pub fn encode_var(&self, s: &mut Session, video: &[RawClip]) -> Result<Var> {
        if video.is_empty() {
            return Err(Error::InvalidArg("cannot encode an empty video".into()));
        }
        let t = video.len();
        let tau = self.config().tau;
        let sampled = sampled_indices(t, tau);
        let mut rows: Vec<Option<Var>> = vec![None; t];
        for &i in &sampled {
            rows[i] = Some(self.trunk.encode_clip(s, &video[i]));
        }
        // interpolate interiors of each sampled gap
        for pair in sampled.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let gap = b - a;
            if gap <= 1 {
                continue;
            }
            let fa = rows[a].expect("left neighbor encoded");
            let fb = rows[b].expect("right neighbor encoded");
            let ra = s.stack_rows(&[fa]);
            let rb = s.stack_rows(&[fb]);
            let inp = s.concat_cols(&[ra, rb]);
            let (w1, b1) = (
                s.param(&format!("{}.interp.w1", self.prefix)),
                s.param(&format!("{}.interp.b1", self.prefix)),
            );
            let h = s.linear(inp, w1, b1);
            let h = s.gelu(h);
            for o in 1..gap {
                let (w, b) = (
                    s.param(&format!("{}.interp.head{o}.w", self.prefix)),
                    s.param(&format!("{}.interp.head{o}.b", self.prefix)),
                );
                let y = s.linear(h, w, b);
                rows[a + o] = Some(s.row(y, 0));
            }
        }
        let rows: Vec<Var> = rows
            .into_iter()
            .map(|r| r.expect("every position covered"))
            .collect();
        Ok(s.stack_rows(&rows))
    }

    /// Dense features as a value (no gradients).
    pub fn encode(&self, ps: &ParamStore, video: &[RawClip]) -> Result<ClipFeatureSeq> {
        let mut s = Session::new(ps);
        let v = self.encode_var(&mut s, video)?;
        let features = s.value(v).clone();
        if !features.is_finite() {
            return Err(Error::NonFinite("sidekick features".into()));
        }
        ClipFeatureSeq::new(features, FeatureSource::Dense, (0..video.len()).collect())
    }
}
