//! Deterministic synthetic video+query generator with planted ground truth.
//!
//! Each sample is a video of `T` clips: background clips are uniform pixel
//! noise, and one contiguous span carries a concept prototype color (noise
//! level `rho` on top). The query is the planted concept's token sequence and
//! the ground-truth span is known exactly, so selection and grounding quality
//! are measurable without any real video.
//!
//! Generation is bit-reproducible: every video derives its own RNG stream
//! from `split_seed ^ video_index`, so parallel generation cannot change
//! bytes.

pub mod container;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoders::{ClipDims, RawClip};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Offset mixed into the seed for the validation split so the two splits
/// never share RNG streams.
const VAL_SEED_SALT: u64 = 0x517c_c1b7_2722_0a95;

/// Reserved token ids below the concept vocabulary.
const RESERVED_TOKENS: usize = 2;
/// Suffix tokens appended after the concept token (3 variants).
const SUFFIX_TOKENS: usize = 3;

/// Total text vocabulary for a bank of `v` concepts.
pub fn vocab_size(v: usize) -> usize {
    RESERVED_TOKENS + v + SUFFIX_TOKENS
}

/// Fixed token sequence naming concept `k`.
pub fn concept_tokens(k: usize, v: usize) -> Vec<usize> {
    vec![RESERVED_TOKENS + k, RESERVED_TOKENS + v + (k % SUFFIX_TOKENS)]
}

/// Generator knobs.
#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    /// Inclusive clip-count range per video.
    pub t_range: (usize, usize),
    /// Concept count `V`.
    pub concepts: usize,
    /// Pixel noise level `rho` inside planted spans.
    pub noise: f64,
    /// Span length as a fraction of `T` (min, max).
    pub span_frac: (f64, f64),
    pub clip: ClipDims,
    /// Distractor spans of other concepts planted per video.
    pub distractors: usize,
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.concepts < 2 {
            return err("need at least 2 concepts".into());
        }
        if self.t_range.0 < 8 || self.t_range.1 > 512 || self.t_range.0 > self.t_range.1 {
            return err(format!("t_range {:?} outside [8, 512]", self.t_range));
        }
        if !(self.span_frac.0 > 0.0 && self.span_frac.1 < 1.0 && self.span_frac.0 <= self.span_frac.1) {
            return err(format!("span_frac {:?} must lie inside (0, 1)", self.span_frac));
        }
        if self.noise < 0.0 || self.noise > 0.2 {
            return err(format!("noise {} outside [0, 0.2]", self.noise));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return err("both splits need at least one sample".into());
        }
        Ok(())
    }
}

/// Concept prototypes in pixel space.
#[derive(Debug, Clone)]
pub struct ConceptBank {
    /// `[V, Cin]` prototype colors.
    pub prototypes: Tensor,
    pub noise: f64,
    pub seed: u64,
}

impl ConceptBank {
    /// Rejection-sample `v` prototypes that stay `> 4·noise` apart pairwise.
    /// All prototypes live in the bright corner of pixel space (channel mean
    /// ≥ 0.7) so planted clips stay linearly separable from the ~0.5-mean
    /// noise background, the survival floor for downstream training.
    pub fn generate(v: usize, channels: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CONCEPT_SEED_SALT);
        let min_dist = 4.0 * noise;
        let mut protos: Vec<Vec<f64>> = Vec::with_capacity(v);
        let mut attempts = 0;
        while protos.len() < v {
            attempts += 1;
            if attempts > 50_000 {
                return Err(Error::Config(format!(
                    "could not place {v} concept prototypes with pairwise distance > {min_dist:.3}"
                )));
            }
            let cand: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.05..0.95)).collect();
            if cand.iter().sum::<f64>() / (channels as f64) < 0.7 {
                continue;
            }
            let ok = protos.iter().all(|p| {
                let d2: f64 = p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() > min_dist
            });
            if ok {
                protos.push(cand);
            }
        }
        Ok(ConceptBank {
            prototypes: Tensor::matrix(&protos)?,
            noise,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let v = self.len();
        let c = self.prototypes.shape()[1];
        let mut best = f64::INFINITY;
        for i in 0..v {
            for j in i + 1..v {
                let d2: f64 = (0..c)
                    .map(|ch| {
                        let d = self.prototypes.at2(i, ch) - self.prototypes.at2(j, ch);
                        d * d
                    })
                    .sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }
}

/// Offset mixed into the seed for prototype sampling.
const CONCEPT_SEED_SALT: u64 = 0x00c0_17ce_97ba_a512;

/// One query with its planted ground truth.
#[derive(Debug, Clone)]
pub struct GroundingSample {
    pub id: String,
    pub video_index: usize,
    pub tokens: Vec<usize>,
    /// Ground-truth span `(t_s, t_e)` in clip units.
    pub span: (f64, f64),
    pub concept: usize,
}

/// A loaded split: per-video clip lists plus query samples.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub videos: Vec<Vec<RawClip>>,
    /// Per video, per clip: the planted concept (ground-truth span or
    /// distractor), or `None` for background.
    pub planted: Vec<Vec<Option<usize>>>,
    pub samples: Vec<GroundingSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Dataset description persisted as `manifest.txt`.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub params: DatasetParams,
    pub dir: PathBuf,
    pub train_file: String,
    pub val_file: String,
    pub concepts_file: String,
}

impl DatasetManifest {
    pub fn split_path(&self, split: Split) -> PathBuf {
        match split {
            Split::Train => self.dir.join(&self.train_file),
            Split::Val => self.dir.join(&self.val_file),
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.params.n_train,
            Split::Val => self.params.n_val,
        }
    }

    pub fn save(&self) -> Result<()> {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "seed={}", p.seed);
        let _ = writeln!(s, "concepts={}", p.concepts);
        let _ = writeln!(s, "noise={}", p.noise);
        let _ = writeln!(s, "span_frac_min={}", p.span_frac.0);
        let _ = writeln!(s, "span_frac_max={}", p.span_frac.1);
        let _ = writeln!(s, "t_min={}", p.t_range.0);
        let _ = writeln!(s, "t_max={}", p.t_range.1);
        let _ = writeln!(s, "clip.frames={}", p.clip.frames);
        let _ = writeln!(s, "clip.height={}", p.clip.height);
        let _ = writeln!(s, "clip.width={}", p.clip.width);
        let _ = writeln!(s, "clip.channels={}", p.clip.channels);
        // Clips are pre-cut; the sliding window that produced them is
        // metadata: window length equals stride (no overlap).
        let _ = writeln!(s, "clip.window={}", p.clip.frames);
        let _ = writeln!(s, "clip.stride={}", p.clip.frames);
        let _ = writeln!(s, "distractors={}", p.distractors);
        let _ = writeln!(s, "count.train={}", p.n_train);
        let _ = writeln!(s, "count.val={}", p.n_val);
        let _ = writeln!(s, "file.train={}", self.train_file);
        let _ = writeln!(s, "file.val={}", self.val_file);
        let _ = writeln!(s, "file.concepts={}", self.concepts_file);
        std::fs::write(self.dir.join("manifest.txt"), s)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut kv = indexmap::IndexMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line without '=': {line}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Config(format!("manifest missing key {k}")))
        };
        let pu = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("manifest key {k} is not an integer")))
        };
        let pf = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("manifest key {k} is not a number")))
        };
        let params = DatasetParams {
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Config("manifest seed is not an integer".into()))?,
            n_train: pu("count.train")?,
            n_val: pu("count.val")?,
            t_range: (pu("t_min")?, pu("t_max")?),
            concepts: pu("concepts")?,
            noise: pf("noise")?,
            span_frac: (pf("span_frac_min")?, pf("span_frac_max")?),
            clip: ClipDims {
                frames: pu("clip.frames")?,
                height: pu("clip.height")?,
                width: pu("clip.width")?,
                channels: pu("clip.channels")?,
            },
            distractors: pu("distractors")?,
        };
        Ok(DatasetManifest {
            params,
            dir: dir.to_path_buf(),
            train_file: get("file.train")?.clone(),
            val_file: get("file.val")?.clone(),
            concepts_file: get("file.concepts")?.clone(),
        })
    }

    pub fn load_concepts(&self) -> Result<ConceptBank> {
        let recs = container::read_container(&self.dir.join(&self.concepts_file))?;
        let protos = container::require(&recs, "prototypes", &self.dir.join(&self.concepts_file))?;
        Ok(ConceptBank {
            prototypes: protos.clone(),
            noise: self.params.noise,
            seed: self.params.seed,
        })
    }
}

struct VideoDraw {
    clips: Vec<Tensor>,
    planted: Vec<Option<usize>>,
    sample_tokens: Vec<usize>,
    span: (f64, f64),
    concept: usize,
}

fn draw_video(params: &DatasetParams, bank: &ConceptBank, split_seed: u64, index: usize) -> Result<VideoDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed ^ index as u64);
    let t = rng.gen_range(params.t_range.0..=params.t_range.1);
    let frac = rng.gen_range(params.span_frac.0..=params.span_frac.1);
    let span_len = ((t as f64 * frac).round() as usize).max(1);
    if span_len >= t {
        return Err(Error::InvalidArg(format!(
            "span of {span_len} clips does not fit a {t}-clip video"
        )));
    }
    let start = rng.gen_range(0..=t - span_len);
    let concept = rng.gen_range(0..params.concepts);

    // Mark planted regions: Some(concept) per clip.
    let mut planted: Vec<Option<usize>> = vec![None; t];
    for slot in planted.iter_mut().skip(start).take(span_len) {
        *slot = Some(concept);
    }
    for _ in 0..params.distractors {
        let d_concept_raw = rng.gen_range(0..params.concepts - 1);
        let d_concept = if d_concept_raw >= concept { d_concept_raw + 1 } else { d_concept_raw };
        let d_len = span_len.min(t - 1);
        // A few placement attempts; skip the distractor when the video is
        // too crowded.
        for _ in 0..20 {
            let d_start = rng.gen_range(0..=t - d_len);
            if planted[d_start..d_start + d_len].iter().all(Option::is_none) {
                for slot in planted.iter_mut().skip(d_start).take(d_len) {
                    *slot = Some(d_concept);
                }
                break;
            }
        }
    }

    let pix = params.clip.pixels();
    let cin = params.clip.channels;
    let mut clips = Vec::with_capacity(t);
    for mark in planted.iter().take(t) {
        let mut data = vec![0.0f64; pix];
        match mark {
            None => {
                for v in data.iter_mut() {
                    *v = rng.gen_range(0.0..1.0);
                }
            }
            Some(k) => {
                for (i, v) in data.iter_mut().enumerate() {
                    let base = bank.prototypes.at2(*k, i % cin);
                    let jitter = if params.noise > 0.0 {
                        params.noise * rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    };
                    *v = (base + jitter).clamp(0.0, 1.0);
                }
            }
        }
        clips.push(Tensor::new(params.clip.shape(), data)?);
    }

    Ok(VideoDraw {
        clips,
        planted,
        sample_tokens: concept_tokens(concept, params.concepts),
        span: (start as f64, (start + span_len) as f64),
        concept,
    })
}

fn split_seed(params: &DatasetParams, split: Split) -> u64 {
    match split {
        Split::Train => params.seed,
        Split::Val => params.seed ^ VAL_SEED_SALT,
    }
}

fn sample_id(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("tr{index:05}"),
        Split::Val => format!("va{index:05}"),
    }
}

fn generate_split(params: &DatasetParams, bank: &ConceptBank, split: Split) -> Result<SplitData> {
    let seed = split_seed(params, split);
    let n = match split {
        Split::Train => params.n_train,
        Split::Val => params.n_val,
    };
    let draws: Vec<Result<VideoDraw>> = (0..n)
        .into_par_iter()
        .map(|i| draw_video(params, bank, seed, i))
        .collect();
    let mut videos = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for (i, draw) in draws.into_iter().enumerate() {
        let draw = draw?;
        let clips: Result<Vec<RawClip>> = draw
            .clips
            .into_iter()
            .map(|t| RawClip::new(t, params.clip))
            .collect();
        videos.push(clips?);
        planted.push(draw.planted);
        samples.push(GroundingSample {
            id: sample_id(split, i),
            video_index: i,
            tokens: draw.sample_tokens,
            span: draw.span,
            concept: draw.concept,
        });
    }
    Ok(SplitData {
        videos,
        planted,
        samples,
    })
}

fn write_split(path: &Path, data: &SplitData) -> Result<()> {
    let mut records: Vec<(String, Tensor)> = Vec::new();
    for (i, video) in data.videos.iter().enumerate() {
        let t = video.len();
        let clip_shape = video[0].tensor().shape().to_vec();
        let mut flat = Vec::with_capacity(t * video[0].tensor().numel());
        for clip in video {
            flat.extend_from_slice(clip.tensor().data());
        }
        let mut shape = vec![t];
        shape.extend_from_slice(&clip_shape);
        records.push((format!("video/{i:05}"), Tensor::new(shape, flat)?));
        let mask: Vec<f64> = data.planted[i]
            .iter()
            .map(|p| p.map_or(-1.0, |k| k as f64))
            .collect();
        records.push((format!("video/{i:05}/planted"), Tensor::vector(&mask)));
    }
    for s in &data.samples {
        let tok: Vec<f64> = s.tokens.iter().map(|&t| t as f64).collect();
        records.push((format!("query/{}/tokens", s.id), Tensor::vector(&tok)));
        records.push((format!("query/{}/span", s.id), Tensor::vector(&[s.span.0, s.span.1])));
        records.push((
            format!("query/{}/video", s.id),
            Tensor::vector(&[s.video_index as f64]),
        ));
        records.push((
            format!("query/{}/concept", s.id),
            Tensor::vector(&[s.concept as f64]),
        ));
    }
    container::write_container(path, records.iter().map(|(n, t)| (n.as_str(), t)))
}

/// Generate both splits plus the concept bank and write them under `dir`.
pub fn generate(params: &DatasetParams, dir: &Path) -> Result<DatasetManifest> {
    params.validate()?;
    std::fs::create_dir_all(dir)?;
    let bank = ConceptBank::generate(params.concepts, params.clip.channels, params.noise, params.seed)?;
    let manifest = DatasetManifest {
        params: params.clone(),
        dir: dir.to_path_buf(),
        train_file: "train.dcf".to_string(),
        val_file: "val.dcf".to_string(),
        concepts_file: "concepts.dcf".to_string(),
    };
    container::write_container(
        &dir.join(&manifest.concepts_file),
        [("prototypes", &bank.prototypes)],
    )?;
    for split in [Split::Train, Split::Val] {
        let data = generate_split(params, &bank, split)?;
        write_split(&manifest.split_path(split), &data)?;
    }
    manifest.save()?;
    Ok(manifest)
}

/// Load one split back from its container.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<SplitData> {
    let path = manifest.split_path(split);
    let recs = container::read_container(&path)?;
    let n = manifest.count(split);
    let mut videos = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    for i in 0..n {
        let rec = container::require(&recs, &format!("video/{i:05}"), &path)?;
        let t = rec.shape()[0];
        let clip_shape = rec.shape()[1..].to_vec();
        let clip_numel: usize = clip_shape.iter().product();
        let mut clips = Vec::with_capacity(t);
        for c in 0..t {
            let slice = rec.data()[c * clip_numel..(c + 1) * clip_numel].to_vec();
            clips.push(RawClip::new(
                Tensor::new(clip_shape.clone(), slice)?,
                manifest.params.clip,
            )?);
        }
        videos.push(clips);
        let mask = container::require(&recs, &format!("video/{i:05}/planted"), &path)?;
        planted.push(
            mask.data()
                .iter()
                .map(|&v| if v < 0.0 { None } else { Some(v as usize) })
                .collect(),
        );
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let id = sample_id(split, i);
        let tokens = container::require(&recs, &format!("query/{id}/tokens"), &path)?;
        let span = container::require(&recs, &format!("query/{id}/span"), &path)?;
        let video = container::require(&recs, &format!("query/{id}/video"), &path)?;
        let concept = container::require(&recs, &format!("query/{id}/concept"), &path)?;
        samples.push(GroundingSample {
            id,
            video_index: video.data()[0] as usize,
            tokens: tokens.data().iter().map(|&t| t as usize).collect(),
            span: (span.data()[0], span.data()[1]),
            concept: concept.data()[0] as usize,
        });
    }
    Ok(SplitData {
        videos,
        planted,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_params(seed: u64) -> DatasetParams {
        DatasetParams {
            seed,
            n_train: 6,
            n_val: 4,
            t_range: (8, 12),
            concepts: 4,
            noise: 0.05,
            span_frac: (0.1, 0.25),
            clip: ClipDims {
                frames: 2,
                height: 4,
                width: 4,
                channels: 3,
            },
            distractors: 1,
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        generate(&tiny_params(42), d1.path()).unwrap();
        generate(&tiny_params(42), d2.path()).unwrap();
        for f in ["train.dcf", "val.dcf", "concepts.dcf", "manifest.txt"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "file {f} differs between identical runs");
        }
        let d3 = tempdir().unwrap();
        generate(&tiny_params(43), d3.path()).unwrap();
        let a = std::fs::read(d1.path().join("train.dcf")).unwrap();
        let b = std::fs::read(d3.path().join("train.dcf")).unwrap();
        assert_ne!(a, b, "different seeds should differ");
    }

    #[test]
    fn zero_noise_plants_exact_prototypes() {
        let dir = tempdir().unwrap();
        let mut p = tiny_params(7);
        p.noise = 0.0;
        let manifest = generate(&p, dir.path()).unwrap();
        let bank = manifest.load_concepts().unwrap();
        let data = load_split(&manifest, Split::Train).unwrap();
        let s = &data.samples[0];
        let clip = data.videos[s.video_index][s.span.0 as usize].tensor();
        let cin = p.clip.channels;
        for (i, &v) in clip.data().iter().enumerate() {
            let want = bank.prototypes.at2(s.concept, i % cin);
            // written through the f32 container, so compare at f32 precision
            assert_eq!(v as f32, want as f32);
        }
    }

    #[test]
    fn spans_respect_fraction_bounds() {
        let dir = tempdir().unwrap();
        let p = tiny_params(11);
        let manifest = generate(&p, dir.path()).unwrap();
        for split in [Split::Train, Split::Val] {
            let data = load_split(&manifest, split).unwrap();
            for s in &data.samples {
                let t = data.videos[s.video_index].len() as f64;
                let len = s.span.1 - s.span.0;
                let lo = (t * p.span_frac.0).round() - 1.0;
                let hi = (t * p.span_frac.1).round() + 1.0;
                assert!(len >= lo.max(1.0) && len <= hi, "span len {len} outside [{lo},{hi}]");
                assert!(s.span.0 >= 0.0 && s.span.1 <= t);
                assert!(len >= 1.0);
            }
        }
    }

    #[test]
    fn splits_share_no_video_span_pairs() {
        let dir = tempdir().unwrap();
        let manifest = generate(&tiny_params(5), dir.path()).unwrap();
        let train = load_split(&manifest, Split::Train).unwrap();
        let val = load_split(&manifest, Split::Val).unwrap();
        for st in &train.samples {
            let vt = &train.videos[st.video_index];
            for sv in &val.samples {
                let vv = &val.videos[sv.video_index];
                let same_video = vt.len() == vv.len()
                    && vt
                        .iter()
                        .zip(vv.iter())
                        .all(|(a, b)| a.tensor().data() == b.tensor().data());
                assert!(
                    !(same_video && st.span == sv.span),
                    "train {} and val {} share a (video, span) pair",
                    st.id,
                    sv.id
                );
            }
        }
    }

    #[test]
    fn prototypes_keep_min_distance() {
        let bank = ConceptBank::generate(8, 3, 0.05, 123).unwrap();
        assert!(bank.min_pairwise_distance() > 4.0 * 0.05);
    }

    #[test]
    fn mean_pixel_linear_probe_separates_planted_clips() {
        // least-squares linear probe on mean clip pixels
        let dir = tempdir().unwrap();
        let mut p = tiny_params(21);
        p.n_train = 20;
        let manifest = generate(&p, dir.path()).unwrap();
        let data = load_split(&manifest, Split::Train).unwrap();

        let cin = p.clip.channels;
        let mut xs: Vec<[f64; 4]> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (video, marks) in data.videos.iter().zip(&data.planted) {
            for (clip, mark) in video.iter().zip(marks) {
                let mut mean = [0.0f64; 4];
                mean[3] = 1.0; // bias column
                for (i, &v) in clip.tensor().data().iter().enumerate() {
                    mean[i % cin] += v;
                }
                let per = clip.tensor().numel() as f64 / cin as f64;
                for m in mean.iter_mut().take(cin) {
                    *m /= per;
                }
                xs.push(mean);
                ys.push(if mark.is_some() { 1.0 } else { -1.0 });
            }
        }
        // normal equations for 4 coefficients
        let mut ata = [[0.0f64; 4]; 4];
        let mut atb = [0.0f64; 4];
        for (x, &y) in xs.iter().zip(&ys) {
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += x[i] * x[j];
                }
                atb[i] += x[i] * y;
            }
        }
        // Gaussian elimination
        let mut w = atb;
        let mut a = ata;
        for i in 0..4 {
            let piv = a[i][i];
            for j in 0..4 {
                a[i][j] /= piv;
            }
            w[i] /= piv;
            for r in 0..4 {
                if r != i {
                    let f = a[r][i];
                    for j in 0..4 {
                        a[r][j] -= f * a[i][j];
                    }
                    w[r] -= f * w[i];
                }
            }
        }
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| {
                let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                (score > 0.0) == (y > 0.0)
            })
            .count();
        let acc = correct as f64 / xs.len() as f64;
        assert!(acc >= 0.95, "linear probe accuracy {acc:.3} below sanity floor");
    }
}
