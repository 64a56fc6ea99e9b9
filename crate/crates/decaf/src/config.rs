//! Run configuration: profiles, key=value files, validation.
//!
//! A config is a flat UTF-8 `key=value` file with dotted sections
//! (`sidekick.tau=2`). Files start from a named profile (`profile=demo`) and
//! override individual keys; unknown keys are errors, so typos fail loudly.

use std::path::Path;

use crate::encoders::{ClipDims, EncoderConfig};
use crate::error::{Error, Result};
use crate::grounder::GrounderConfig;
use crate::numerics::{Optimizer, OptimizerKind};
use crate::saliency::LossWeights;
use crate::synthdata::DatasetParams;

/// Optimization knobs for one training stage.
#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
}

impl TrainParams {
    pub fn build_optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
    pub data: DatasetParams,
    pub sidekick: EncoderConfig,
    pub expert: EncoderConfig,
    pub text_max_tokens: usize,
    /// Saliency selection ratio `c`.
    pub selection_ratio: f64,
    pub temperature: f64,
    pub loss_weights: LossWeights,
    pub sidekick_train: TrainParams,
    pub grounder_train: TrainParams,
    pub grounder: GrounderConfig,
    pub eval_ks: Vec<usize>,
    pub eval_thetas: Vec<f64>,
}

impl RunConfig {
    /// Seconds-scale profile with gradient-checkable dimensions.
    pub fn test_profile() -> Self {
        let clip = ClipDims {
            frames: 4,
            height: 8,
            width: 8,
            channels: 3,
        };
        RunConfig {
            profile: "test".into(),
            seed: 7,
            jobs: 0,
            data: DatasetParams {
                seed: 7,
                n_train: 12,
                n_val: 6,
                t_range: (8, 12),
                concepts: 4,
                noise: 0.05,
                span_frac: (0.1, 0.3),
                clip,
                distractors: 1,
            },
            sidekick: EncoderConfig {
                n_blocks: 2,
                pool_block_index: 1,
                pool_factor: 2,
                tau: 2,
                d_model: 8,
                n_heads: 2,
                patch: (1, 4, 4),
                clip,
            },
            expert: EncoderConfig {
                n_blocks: 4,
                pool_block_index: 1,
                pool_factor: 1,
                tau: 1,
                d_model: 8,
                n_heads: 2,
                patch: (1, 4, 4),
                clip,
            },
            text_max_tokens: 6,
            selection_ratio: 0.5,
            temperature: 0.07,
            loss_weights: LossWeights::default(),
            sidekick_train: TrainParams {
                steps: 40,
                lr: 0.002,
                batch: 4,
                optimizer: OptimizerKind::Sgd,
            },
            grounder_train: TrainParams {
                steps: 60,
                lr: 0.01,
                batch: 4,
                optimizer: OptimizerKind::Sgd,
            },
            grounder: GrounderConfig {
                d_model: 8,
                n_heads: 2,
                scales: 2,
                window: 9,
                mtr_layers: 3,
                r0: 4.0,
                focal_alpha: 0.25,
                focal_gamma: 2.0,
                lambda_diou: 1.0,
                nms_sigma: 0.9,
                nms_score_floor: 1e-3,
                top_k: 5,
                pre_nms: 64,
                use_dense: true,
                use_salient: true,
                use_scores: true,
                use_qta: true,
                use_mtr: true,
            },
            eval_ks: vec![1, 5],
            eval_thetas: vec![0.3, 0.5],
        }
    }

    /// Minutes-scale profile used by the benchmark and acceptance runs.
    pub fn demo_profile() -> Self {
        let mut cfg = Self::test_profile();
        cfg.profile = "demo".into();
        cfg.seed = 2024;
        cfg.data = DatasetParams {
            seed: 2024,
            n_train: 520,
            n_val: 200,
            t_range: (48, 64),
            concepts: 8,
            noise: 0.05,
            span_frac: (0.05, 0.08),
            clip: cfg.data.clip,
            distractors: 1,
        };
        cfg.sidekick.d_model = 32;
        cfg.sidekick.n_heads = 4;
        cfg.expert.d_model = 32;
        cfg.expert.n_heads = 4;
        cfg.sidekick_train = TrainParams {
            steps: 300,
            lr: 1e-3,
            batch: 8,
            optimizer: OptimizerKind::Adam,
        };
        cfg.grounder_train = TrainParams {
            steps: 600,
            lr: 2e-3,
            batch: 8,
            optimizer: OptimizerKind::Adam,
        };
        cfg.grounder.d_model = 32;
        cfg.grounder.n_heads = 4;
        cfg.grounder.scales = 3;
        cfg.grounder.mtr_layers = 8;
        cfg
    }

    /// Published hyperparameters for shape parity. Validates and supports
    /// analytic compute accounting; not meant to be trained at desk scale.
    pub fn paper_default_profile() -> Self {
        let clip = ClipDims {
            frames: 16,
            height: 224,
            width: 224,
            channels: 3,
        };
        let mut cfg = Self::demo_profile();
        cfg.profile = "paper-default".into();
        cfg.data.clip = clip;
        cfg.data.t_range = (320, 512);
        cfg.data.concepts = 16;
        cfg.sidekick = EncoderConfig {
            n_blocks: 12,
            pool_block_index: 1,
            pool_factor: 4,
            tau: 2,
            d_model: 768,
            n_heads: 12,
            patch: (2, 14, 14),
            clip,
        };
        cfg.expert = EncoderConfig {
            n_blocks: 12,
            pool_block_index: 1,
            pool_factor: 1,
            tau: 1,
            d_model: 768,
            n_heads: 12,
            patch: (2, 14, 14),
            clip,
        };
        cfg.grounder.d_model = 768;
        cfg.grounder.n_heads = 12;
        cfg.grounder.scales = 8;
        cfg.grounder.mtr_layers = 8;
        cfg
    }

    pub fn named_profile(name: &str) -> Result<Self> {
        match name {
            "test" => Ok(Self::test_profile()),
            "demo" => Ok(Self::demo_profile()),
            "paper-default" => Ok(Self::paper_default_profile()),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected test | demo | paper-default)"
            ))),
        }
    }

    /// Parse a config file: optional `profile=` line selects the base, every
    /// other line overrides one key.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut profile = "test".to_string();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "profile" {
                profile = v.to_string();
            } else {
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        let mut cfg = Self::named_profile(&profile)?;
        for (k, v) in pairs {
            cfg.apply_kv(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn pf(v: &str, k: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{k}: `{v}` is not a number")))
        }
        fn pu(v: &str, k: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{k}: `{v}` is not an integer")))
        }
        fn pb(v: &str, k: &str) -> Result<bool> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!("{k}: `{v}` is not a boolean"))),
            }
        }
        match key {
            "seed" => {
                self.seed = pu(value, key)? as u64;
                self.data.seed = self.seed;
            }
            "jobs" => self.jobs = pu(value, key)?,
            "data.n_train" => self.data.n_train = pu(value, key)?,
            "data.n_val" => self.data.n_val = pu(value, key)?,
            "data.t_min" => self.data.t_range.0 = pu(value, key)?,
            "data.t_max" => self.data.t_range.1 = pu(value, key)?,
            "data.concepts" => self.data.concepts = pu(value, key)?,
            "data.noise" => self.data.noise = pf(value, key)?,
            "data.span_min" => self.data.span_frac.0 = pf(value, key)?,
            "data.span_max" => self.data.span_frac.1 = pf(value, key)?,
            "data.distractors" => self.data.distractors = pu(value, key)?,
            "clip.frames" => self.set_clip(pu(value, key)?, 0),
            "clip.height" => self.set_clip(pu(value, key)?, 1),
            "clip.width" => self.set_clip(pu(value, key)?, 2),
            "clip.channels" => self.set_clip(pu(value, key)?, 3),
            "encoder.d_model" => {
                let d = pu(value, key)?;
                self.sidekick.d_model = d;
                self.expert.d_model = d;
                self.grounder.d_model = d;
            }
            "encoder.heads" => {
                let h = pu(value, key)?;
                self.sidekick.n_heads = h;
                self.expert.n_heads = h;
                self.grounder.n_heads = h;
            }
            "encoder.patch_l" => {
                let p = pu(value, key)?;
                self.sidekick.patch.0 = p;
                self.expert.patch.0 = p;
            }
            "encoder.patch_h" => {
                let p = pu(value, key)?;
                self.sidekick.patch.1 = p;
                self.expert.patch.1 = p;
            }
            "encoder.patch_w" => {
                let p = pu(value, key)?;
                self.sidekick.patch.2 = p;
                self.expert.patch.2 = p;
            }
            "sidekick.blocks" => self.sidekick.n_blocks = pu(value, key)?,
            "sidekick.pool_block" => self.sidekick.pool_block_index = pu(value, key)?,
            "sidekick.pool_factor" => self.sidekick.pool_factor = pu(value, key)?,
            "sidekick.tau" => self.sidekick.tau = pu(value, key)?,
            "expert.blocks" => self.expert.n_blocks = pu(value, key)?,
            "text.max_tokens" => self.text_max_tokens = pu(value, key)?,
            "select.ratio" => self.selection_ratio = pf(value, key)?,
            "loss.temperature" => self.temperature = pf(value, key)?,
            "loss.w_saliency" => self.loss_weights.saliency = pf(value, key)?,
            "loss.w_distill" => self.loss_weights.distill = pf(value, key)?,
            "train_sidekick.steps" => self.sidekick_train.steps = pu(value, key)?,
            "train_sidekick.lr" => self.sidekick_train.lr = pf(value, key)?,
            "train_sidekick.batch" => self.sidekick_train.batch = pu(value, key)?,
            "train_sidekick.opt" => self.sidekick_train.optimizer = value.parse()?,
            "train_grounder.steps" => self.grounder_train.steps = pu(value, key)?,
            "train_grounder.lr" => self.grounder_train.lr = pf(value, key)?,
            "train_grounder.batch" => self.grounder_train.batch = pu(value, key)?,
            "train_grounder.opt" => self.grounder_train.optimizer = value.parse()?,
            "grounder.scales" => self.grounder.scales = pu(value, key)?,
            "grounder.window" => self.grounder.window = pu(value, key)?,
            "grounder.mtr_layers" => self.grounder.mtr_layers = pu(value, key)?,
            "grounder.r0" => self.grounder.r0 = pf(value, key)?,
            "grounder.focal_alpha" => self.grounder.focal_alpha = pf(value, key)?,
            "grounder.focal_gamma" => self.grounder.focal_gamma = pf(value, key)?,
            "grounder.lambda_diou" => self.grounder.lambda_diou = pf(value, key)?,
            "grounder.use_dense" => self.grounder.use_dense = pb(value, key)?,
            "grounder.use_salient" => self.grounder.use_salient = pb(value, key)?,
            "grounder.use_scores" => self.grounder.use_scores = pb(value, key)?,
            "grounder.use_qta" => self.grounder.use_qta = pb(value, key)?,
            "grounder.use_mtr" => self.grounder.use_mtr = pb(value, key)?,
            "nms.sigma" => self.grounder.nms_sigma = pf(value, key)?,
            "nms.floor" => self.grounder.nms_score_floor = pf(value, key)?,
            "nms.top_k" => self.grounder.top_k = pu(value, key)?,
            "nms.pre" => self.grounder.pre_nms = pu(value, key)?,
            "eval.ks" => {
                self.eval_ks = value
                    .split(',')
                    .map(|s| pu(s.trim(), key))
                    .collect::<Result<_>>()?;
            }
            "eval.thetas" => {
                self.eval_thetas = value
                    .split(',')
                    .map(|s| pf(s.trim(), key))
                    .collect::<Result<_>>()?;
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn set_clip(&mut self, value: usize, which: usize) {
        for c in [
            &mut self.data.clip,
            &mut self.sidekick.clip,
            &mut self.expert.clip,
        ] {
            match which {
                0 => c.frames = value,
                1 => c.height = value,
                2 => c.width = value,
                _ => c.channels = value,
            }
        }
    }

    /// Full snapshot in config-file syntax; parsing it back reproduces the
    /// config exactly.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "profile={}", self.profile);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "jobs={}", self.jobs);
        let _ = writeln!(s, "data.n_train={}", self.data.n_train);
        let _ = writeln!(s, "data.n_val={}", self.data.n_val);
        let _ = writeln!(s, "data.t_min={}", self.data.t_range.0);
        let _ = writeln!(s, "data.t_max={}", self.data.t_range.1);
        let _ = writeln!(s, "data.concepts={}", self.data.concepts);
        let _ = writeln!(s, "data.noise={}", self.data.noise);
        let _ = writeln!(s, "data.span_min={}", self.data.span_frac.0);
        let _ = writeln!(s, "data.span_max={}", self.data.span_frac.1);
        let _ = writeln!(s, "data.distractors={}", self.data.distractors);
        let _ = writeln!(s, "clip.frames={}", self.data.clip.frames);
        let _ = writeln!(s, "clip.height={}", self.data.clip.height);
        let _ = writeln!(s, "clip.width={}", self.data.clip.width);
        let _ = writeln!(s, "clip.channels={}", self.data.clip.channels);
        let _ = writeln!(s, "encoder.d_model={}", self.sidekick.d_model);
        let _ = writeln!(s, "encoder.heads={}", self.sidekick.n_heads);
        let _ = writeln!(s, "encoder.patch_l={}", self.sidekick.patch.0);
        let _ = writeln!(s, "encoder.patch_h={}", self.sidekick.patch.1);
        let _ = writeln!(s, "encoder.patch_w={}", self.sidekick.patch.2);
        let _ = writeln!(s, "sidekick.blocks={}", self.sidekick.n_blocks);
        let _ = writeln!(s, "sidekick.pool_block={}", self.sidekick.pool_block_index);
        let _ = writeln!(s, "sidekick.pool_factor={}", self.sidekick.pool_factor);
        let _ = writeln!(s, "sidekick.tau={}", self.sidekick.tau);
        let _ = writeln!(s, "expert.blocks={}", self.expert.n_blocks);
        let _ = writeln!(s, "text.max_tokens={}", self.text_max_tokens);
        let _ = writeln!(s, "select.ratio={}", self.selection_ratio);
        let _ = writeln!(s, "loss.temperature={}", self.temperature);
        let _ = writeln!(s, "loss.w_saliency={}", self.loss_weights.saliency);
        let _ = writeln!(s, "loss.w_distill={}", self.loss_weights.distill);
        let _ = writeln!(s, "train_sidekick.steps={}", self.sidekick_train.steps);
        let _ = writeln!(s, "train_sidekick.lr={}", self.sidekick_train.lr);
        let _ = writeln!(s, "train_sidekick.batch={}", self.sidekick_train.batch);
        let _ = writeln!(s, "train_sidekick.opt={}", self.sidekick_train.optimizer.label());
        let _ = writeln!(s, "train_grounder.steps={}", self.grounder_train.steps);
        let _ = writeln!(s, "train_grounder.lr={}", self.grounder_train.lr);
        let _ = writeln!(s, "train_grounder.batch={}", self.grounder_train.batch);
        let _ = writeln!(s, "train_grounder.opt={}", self.grounder_train.optimizer.label());
        let _ = writeln!(s, "grounder.scales={}", self.grounder.scales);
        let _ = writeln!(s, "grounder.window={}", self.grounder.window);
        let _ = writeln!(s, "grounder.mtr_layers={}", self.grounder.mtr_layers);
        let _ = writeln!(s, "grounder.r0={}", self.grounder.r0);
        let _ = writeln!(s, "grounder.focal_alpha={}", self.grounder.focal_alpha);
        let _ = writeln!(s, "grounder.focal_gamma={}", self.grounder.focal_gamma);
        let _ = writeln!(s, "grounder.lambda_diou={}", self.grounder.lambda_diou);
        let _ = writeln!(s, "grounder.use_dense={}", self.grounder.use_dense);
        let _ = writeln!(s, "grounder.use_salient={}", self.grounder.use_salient);
        let _ = writeln!(s, "grounder.use_scores={}", self.grounder.use_scores);
        let _ = writeln!(s, "grounder.use_qta={}", self.grounder.use_qta);
        let _ = writeln!(s, "grounder.use_mtr={}", self.grounder.use_mtr);
        let _ = writeln!(s, "nms.sigma={}", self.grounder.nms_sigma);
        let _ = writeln!(s, "nms.floor={}", self.grounder.nms_score_floor);
        let _ = writeln!(s, "nms.top_k={}", self.grounder.top_k);
        let _ = writeln!(s, "nms.pre={}", self.grounder.pre_nms);
        let _ = writeln!(
            s,
            "eval.ks={}",
            self.eval_ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "eval.thetas={}",
            self.eval_thetas.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.sidekick.validate()?;
        self.expert.validate()?;
        self.grounder.validate()?;
        if self.sidekick.d_model != self.expert.d_model || self.sidekick.d_model != self.grounder.d_model {
            return Err(Error::Config(format!(
                "feature widths disagree: sidekick {}, expert {}, grounder {}",
                self.sidekick.d_model, self.expert.d_model, self.grounder.d_model
            )));
        }
        if self.sidekick.clip != self.data.clip || self.expert.clip != self.data.clip {
            return Err(Error::Config("encoder clip dims must match the dataset".into()));
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "selection ratio {} outside (0, 1]",
                self.selection_ratio
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        self.grounder.validate_for_len(self.data.t_range.0)?;
        if self.text_max_tokens < 2 {
            return Err(Error::Config("text.max_tokens must be at least 2".into()));
        }
        if self.eval_ks.is_empty() || self.eval_thetas.is_empty() {
            return Err(Error::Config("evaluation grid must not be empty".into()));
        }
        if self.sidekick_train.batch < 2 {
            return Err(Error::Config(
                "sidekick batch must be >= 2 (the query-side loss needs cross-query negatives)".into(),
            ));
        }
        Ok(())
    }

    /// Vocabulary implied by the dataset's concept count.
    pub fn vocab(&self) -> usize {
        crate::synthdata::vocab_size(self.data.concepts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for p in ["test", "demo", "paper-default"] {
            let cfg = RunConfig::named_profile(p).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("profile {p}: {e}"));
        }
    }

    #[test]
    fn kv_round_trip_reproduces_config() {
        let cfg = RunConfig::demo_profile();
        let text = cfg.to_kv();
        let back = RunConfig::from_kv_text(&text).unwrap();
        assert_eq!(back.to_kv(), text);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::from_kv_text("profile=test\nsidekick.tau=3\nselect.ratio=0.3\n").unwrap();
        assert_eq!(cfg.sidekick.tau, 3);
        assert_eq!(cfg.selection_ratio, 0.3);
        assert!(RunConfig::from_kv_text("bogus.key=1\n").is_err());
        assert!(RunConfig::from_kv_text("profile=nope\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected_at_validation() {
        let mut cfg = RunConfig::test_profile();
        cfg.selection_ratio = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::test_profile();
        cfg.grounder.scales = 5; // t_min 8 too short for 2^5
        assert!(cfg.validate().is_err());
    }
}
