//! Batch pipeline: generation → sidekick training → selection → extraction →
//! grounder training → inference → evaluation, plus compute reporting and
//! ablation sweeps. The CLI and the runnable examples are thin wrappers over
//! these functions.
//!
//! Every command is deterministic given its inputs and seeds: parallel maps
//! collect in index order and all reductions run sequentially over those
//! ordered results.

mod ablate;

pub use ablate::{ablate_with_config, cmd_ablate, AblatePreset, AblateRow};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::encoders::{ExpertModel, QueryFeatures, RawClip, SidekickModel, TextModel};
use crate::error::{Error, Result};
use crate::evalbench::{self, BaselineMode, ComputeProfile, EvalReport};
use crate::grounder::{
    grounder_train_step, pad_salient, GroundInputs, GrounderExample, GrounderModel, MomentProposal,
};
use crate::numerics::{ParamStore, Tensor};
use crate::saliency::{
    compute_saliency, sidekick_train_step, ContrastivePairing, SaliencyMap, SidekickExample,
};
use crate::synthdata::{self, container, DatasetManifest, Split, SplitData};

const GROUNDER_SEED_SALT: u64 = 0x9f0a_77f3_12d4_8c01;
const SHUFFLE_SEED_SALT: u64 = 0x51ab_33c9_0b77_e1f2;

/// Dataset directory: `$DECAF_DATA_DIR` when set, else `<out>/dataset`.
pub fn dataset_dir(out: &Path) -> PathBuf {
    match std::env::var_os("DECAF_DATA_DIR") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => out.join("dataset"),
    }
}

pub fn ckpt_dir(out: &Path) -> PathBuf {
    out.join("ckpt")
}

fn sidekick_ckpt(out: &Path) -> PathBuf {
    ckpt_dir(out).join("sidekick.dcf")
}

fn expert_ckpt(out: &Path) -> PathBuf {
    ckpt_dir(out).join("expert.dcf")
}

fn grounder_ckpt(out: &Path) -> PathBuf {
    ckpt_dir(out).join("grounder.dcf")
}

fn features_path(out: &Path, split: Split) -> PathBuf {
    out.join(format!("features-{}.dcf", split.tag()))
}

fn saliency_path(out: &Path, split: Split) -> PathBuf {
    out.join(format!("saliency-{}.dcf", split.tag()))
}

/// Reproducibility sidecar written next to every command artifact.
fn write_record(out: &Path, command: &str, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "version=decaf-{}", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        let _ = writeln!(s, "{k}={v}");
    }
    s.push_str("# config snapshot\n");
    s.push_str(&cfg.to_kv());
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(format!("{command}.record")), s)?;
    Ok(())
}

fn models(cfg: &RunConfig) -> (SidekickModel, ExpertModel, TextModel) {
    (
        SidekickModel::new("sidekick", cfg.sidekick.clone()),
        ExpertModel::new("expert", cfg.expert.clone()),
        TextModel::new(
            "text",
            cfg.vocab(),
            cfg.sidekick.d_model,
            cfg.sidekick.n_heads,
            cfg.text_max_tokens,
        ),
    )
}

/// Generate the synthetic dataset under the out directory.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dir = dataset_dir(out);
    let manifest = synthdata::generate(&cfg.data, &dir)?;
    write_record(out, "gen-data", cfg, &[("dataset", dir.display().to_string())])?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub first_loss: f64,
    pub checkpoint: PathBuf,
}

/// Deterministic epoch-shuffled batch index stream.
pub(crate) struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            order: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SEED_SALT),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trained-sidekick bundle kept in memory.
pub(crate) struct SidekickTraining {
    /// Sidekick + text + (frozen) expert parameters.
    pub store: ParamStore,
    pub curve: String,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Core sidekick training loop shared by the command and the ablation runs.
pub(crate) fn train_sidekick_core(cfg: &RunConfig, train: &SplitData, quiet: bool) -> Result<SidekickTraining> {
    let (sidekick, expert, text) = models(cfg);
    let mut ps = ParamStore::new(cfg.seed);
    sidekick.init(&mut ps);
    text.init(&mut ps);
    expert.init(&mut ps);

    // Distillation targets: the frozen expert over every clip of every video.
    let expert_store = ps.subset(&["expert."]);
    let expert_feats: Vec<Result<Tensor>> = train
        .videos
        .par_iter()
        .map(|video| {
            let refs: Vec<&RawClip> = video.iter().collect();
            Ok(expert.encode(&expert_store, &refs)?.features)
        })
        .collect();
    let expert_feats: Vec<Tensor> = expert_feats.into_iter().collect::<Result<_>>()?;

    let pairings: Vec<ContrastivePairing> = train
        .samples
        .iter()
        .map(|s| ContrastivePairing::from_span(s.span, train.videos[s.video_index].len()))
        .collect::<Result<_>>()?;

    let mut stream = BatchStream::new(train.samples.len(), cfg.seed);
    let mut opt = cfg.sidekick_train.build_optimizer();
    let mut curve = String::from("step,saliency,distill,total\n");
    let (mut first, mut last) = (f64::NAN, f64::NAN);
    for step in 0..cfg.sidekick_train.steps {
        let idx = stream.next_batch(cfg.sidekick_train.batch);
        let batch: Vec<SidekickExample> = idx
            .iter()
            .map(|&i| {
                let s = &train.samples[i];
                SidekickExample {
                    video: &train.videos[s.video_index],
                    tokens: &s.tokens,
                    pairing: pairings[i].clone(),
                    expert_features: &expert_feats[s.video_index],
                }
            })
            .collect();
        let stats = sidekick_train_step(&mut ps, &mut opt, &sidekick, &text, &batch, cfg.loss_weights)?;
        if step == 0 {
            first = stats.total_loss;
        }
        last = stats.total_loss;
        let _ = writeln!(
            curve,
            "{step},{:.6},{:.6},{:.6}",
            stats.saliency_loss, stats.distill_loss, stats.total_loss
        );
        if !quiet && (step % 50 == 0 || step + 1 == cfg.sidekick_train.steps) {
            println!(
                "train-sidekick step {step}: saliency {:.4} distill {:.4} total {:.4}",
                stats.saliency_loss, stats.distill_loss, stats.total_loss
            );
        }
    }
    Ok(SidekickTraining {
        store: ps,
        curve,
        first_loss: first,
        final_loss: last,
    })
}

/// Train the sidekick (and text encoder) against a frozen random-init expert.
pub fn cmd_train_sidekick(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&dataset_dir(out))?;
    let train = synthdata::load_split(&manifest, Split::Train)?;
    let run = train_sidekick_core(cfg, &train, false)?;
    std::fs::create_dir_all(ckpt_dir(out))?;
    container::save_param_store(&sidekick_ckpt(out), &run.store.subset(&["sidekick.", "text."]))?;
    container::save_param_store(&expert_ckpt(out), &run.store.subset(&["expert."]))?;
    std::fs::write(out.join("sidekick_loss.csv"), &run.curve)?;
    write_record(out, "train-sidekick", cfg, &[("steps", cfg.sidekick_train.steps.to_string())])?;
    Ok(TrainSummary {
        steps: cfg.sidekick_train.steps,
        final_loss: run.final_loss,
        first_loss: run.first_loss,
        checkpoint: sidekick_ckpt(out),
    })
}

/// Saliency scoring + selection for every query of both splits.
#[derive(Debug, Clone, Default)]
pub struct SelectionSummary {
    /// `(learned, random, uniform)` mean selection recall per split tag.
    pub recalls: IndexMap<String, (f64, f64, f64)>,
}

pub fn cmd_select(cfg: &RunConfig, out: &Path) -> Result<SelectionSummary> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&dataset_dir(out))?;
    let store = container::load_param_store(&sidekick_ckpt(out), cfg.seed)?;
    let (sidekick, _, text) = models(cfg);
    let ratio = cfg.selection_ratio;

    let mut summary = SelectionSummary::default();
    let mut report = String::new();
    for split in [Split::Train, Split::Val] {
        let data = synthdata::load_split(&manifest, split)?;
        let maps: Vec<Result<SaliencyMap>> = data
            .samples
            .par_iter()
            .map(|s| {
                let dense = sidekick.encode(&store, &data.videos[s.video_index])?;
                let q = text.encode(&store, &s.tokens)?;
                let scores = compute_saliency(&dense, &q)?;
                SaliencyMap::from_scores(scores, ratio)
            })
            .collect();
        let maps: Vec<SaliencyMap> = maps.into_iter().collect::<Result<_>>()?;

        // The random baseline is a Monte-Carlo estimate over several draws
        // per query; a single draw is noisy at a few hundred queries.
        const RANDOM_DRAWS: u64 = 16;
        let mut records: Vec<(String, Tensor)> = Vec::new();
        let (mut learned, mut random, mut uniform) = (0.0, 0.0, 0.0);
        for (i, (s, map)) in data.samples.iter().zip(&maps).enumerate() {
            let t = data.videos[s.video_index].len();
            learned += evalbench::selection_recall(&map.selected, s.span, t)?;
            let mut r = 0.0;
            for draw in 0..RANDOM_DRAWS {
                let rand_sel = evalbench::baseline_select(
                    t,
                    ratio,
                    BaselineMode::Random,
                    cfg.seed ^ ((i as u64) * RANDOM_DRAWS + draw),
                )?;
                r += evalbench::selection_recall(&rand_sel, s.span, t)?;
            }
            random += r / RANDOM_DRAWS as f64;
            let uni_sel = evalbench::baseline_select(t, ratio, BaselineMode::Uniform, 0)?;
            uniform += evalbench::selection_recall(&uni_sel, s.span, t)?;
            records.push((format!("saliency/{}", s.id), map.scores.clone()));
            let sel: Vec<f64> = map.selected.iter().map(|&v| v as f64).collect();
            records.push((format!("selected/{}", s.id), Tensor::vector(&sel)));
        }
        let n = data.samples.len() as f64;
        let (learned, random, uniform) = (learned / n, random / n, uniform / n);
        summary
            .recalls
            .insert(split.tag().to_string(), (learned, random, uniform));
        let _ = writeln!(report, "{}.selection_recall.learned={learned:.3}", split.tag());
        let _ = writeln!(report, "{}.selection_recall.random={random:.3}", split.tag());
        let _ = writeln!(report, "{}.selection_recall.uniform={uniform:.3}", split.tag());
        let _ = writeln!(report, "{}.ratio={ratio}", split.tag());
        container::write_container(
            &saliency_path(out, split),
            records.iter().map(|(n, t)| (n.as_str(), t)),
        )?;
        println!(
            "select[{}]: learned {learned:.1} | random {random:.1} | uniform {uniform:.1} (c={ratio})",
            split.tag()
        );
    }
    std::fs::write(out.join("selection.txt"), report)?;
    write_record(out, "select", cfg, &[("ratio", ratio.to_string())])?;
    Ok(summary)
}

/// Dense + salient feature extraction for both splits, keyed by query id.
pub fn cmd_extract(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&dataset_dir(out))?;
    let mut store = container::load_param_store(&sidekick_ckpt(out), cfg.seed)?;
    let expert_store = container::load_param_store(&expert_ckpt(out), cfg.seed)?;
    store.absorb(&expert_store, "expert.");
    let (sidekick, expert, text) = models(cfg);

    for split in [Split::Train, Split::Val] {
        let data = synthdata::load_split(&manifest, split)?;
        let sal = container::read_container(&saliency_path(out, split))?;
        let per_query: Vec<Result<Vec<(String, Tensor)>>> = data
            .samples
            .par_iter()
            .map(|s| {
                let video = &data.videos[s.video_index];
                let t = video.len();
                let dense = sidekick.encode(&store, video)?;
                let q = text.encode(&store, &s.tokens)?;
                let scores = container::require(&sal, &format!("saliency/{}", s.id), &saliency_path(out, split))?;
                let selected_rec =
                    container::require(&sal, &format!("selected/{}", s.id), &saliency_path(out, split))?;
                let selected: Vec<usize> = selected_rec.data().iter().map(|&v| v as usize).collect();
                let clips: Vec<&RawClip> = selected.iter().map(|&i| &video[i]).collect();
                let salient = expert.encode_with_origin(&store, &clips, selected.clone())?;
                let sel_f: Vec<f64> = selected.iter().map(|&v| v as f64).collect();
                Ok(vec![
                    (format!("dense/{}", s.id), dense.features),
                    (format!("salient/{}", s.id), salient.features),
                    (format!("selected/{}", s.id), Tensor::vector(&sel_f)),
                    (format!("scores/{}", s.id), scores.clone()),
                    (format!("qfeat/{}", s.id), q.stacked()),
                    (format!("gt/{}", s.id), Tensor::vector(&[s.span.0, s.span.1])),
                    (format!("t/{}", s.id), Tensor::vector(&[t as f64])),
                ])
            })
            .collect();
        let mut records = Vec::new();
        for r in per_query {
            records.extend(r?);
        }
        container::write_container(
            &features_path(out, split),
            records.iter().map(|(n, t)| (n.as_str(), t)),
        )?;
        println!("extract[{}]: {} queries", split.tag(), data.samples.len());
    }
    write_record(out, "extract", cfg, &[])?;
    Ok(())
}

/// Feature bundle for one query, reassembled from a features container.
pub struct QueryFeaturesOnDisk {
    pub id: String,
    pub inputs: GroundInputs,
    pub gt: (f64, f64),
}

pub fn load_features(path: &Path) -> Result<Vec<QueryFeaturesOnDisk>> {
    let recs = container::read_container(path)?;
    // query ids in insertion order via the dense/ records
    let ids: Vec<String> = recs
        .keys()
        .filter_map(|k| k.strip_prefix("dense/").map(str::to_string))
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let dense = container::require(&recs, &format!("dense/{id}"), path)?.clone();
        let salient_rows = container::require(&recs, &format!("salient/{id}"), path)?;
        let selected: Vec<usize> = container::require(&recs, &format!("selected/{id}"), path)?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let scores = container::require(&recs, &format!("scores/{id}"), path)?.clone();
        let query = container::require(&recs, &format!("qfeat/{id}"), path)?.clone();
        let gt_rec = container::require(&recs, &format!("gt/{id}"), path)?;
        let t = dense.shape()[0];
        let seq = crate::encoders::ClipFeatureSeq::new(
            salient_rows.clone(),
            crate::encoders::FeatureSource::SalientPadded,
            selected.clone(),
        )?;
        let salient = pad_salient(&seq, &selected, t)?;
        out.push(QueryFeaturesOnDisk {
            id,
            inputs: GroundInputs {
                dense,
                salient,
                scores,
                query,
            },
            gt: (gt_rec.data()[0], gt_rec.data()[1]),
        });
    }
    Ok(out)
}

/// Train the grounding head on precomputed features.
pub fn cmd_train_grounder(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let feats = load_features(&features_path(out, Split::Train))?;
    if feats.is_empty() {
        return Err(Error::InvalidArg("no training features found".into()));
    }
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let mut ps = ParamStore::new(cfg.seed ^ GROUNDER_SEED_SALT);
    model.init(&mut ps);

    let mut stream = BatchStream::new(feats.len(), cfg.seed ^ GROUNDER_SEED_SALT);
    let mut opt = cfg.grounder_train.build_optimizer();
    let mut curve = String::from("step,focal,diou,total\n");
    let (mut first, mut last) = (f64::NAN, f64::NAN);
    for step in 0..cfg.grounder_train.steps {
        let idx = stream.next_batch(cfg.grounder_train.batch);
        let batch: Vec<GrounderExample> = idx
            .iter()
            .map(|&i| GrounderExample {
                inputs: model.masked_inputs(&feats[i].inputs),
                gt: feats[i].gt,
            })
            .collect();
        let stats = grounder_train_step(&mut ps, &mut opt, &model, &batch)?;
        if step == 0 {
            first = stats.total;
        }
        last = stats.total;
        let _ = writeln!(curve, "{step},{:.6},{:.6},{:.6}", stats.focal, stats.diou, stats.total);
        if step % 100 == 0 || step + 1 == cfg.grounder_train.steps {
            println!(
                "train-grounder step {step}: focal {:.4} diou {:.4} total {:.4}",
                stats.focal, stats.diou, stats.total
            );
        }
    }
    std::fs::create_dir_all(ckpt_dir(out))?;
    container::save_param_store(&grounder_ckpt(out), &ps.subset(&["grounder."]))?;
    std::fs::write(out.join("grounder_loss.csv"), curve)?;
    write_record(out, "train-grounder", cfg, &[("steps", cfg.grounder_train.steps.to_string())])?;
    Ok(TrainSummary {
        steps: cfg.grounder_train.steps,
        final_loss: last,
        first_loss: first,
        checkpoint: grounder_ckpt(out),
    })
}

/// Run grounding over a split and dump ranked predictions.
pub fn cmd_infer(cfg: &RunConfig, out: &Path, split: Split) -> Result<PathBuf> {
    cfg.validate()?;
    let feats = load_features(&features_path(out, split))?;
    let ps = container::load_param_store(&grounder_ckpt(out), cfg.seed)?;
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let proposals: Vec<Result<Vec<MomentProposal>>> = feats
        .par_iter()
        .map(|q| model.ground(&ps, &model.masked_inputs(&q.inputs)))
        .collect();
    let mut dump = String::new();
    for (q, props) in feats.iter().zip(proposals) {
        let props = props?;
        let _ = write!(dump, "{}", q.id);
        for p in &props {
            // default float formatting round-trips exactly, so evaluating the
            // dump reproduces in-process evaluation bit for bit
            let _ = write!(dump, "\t{}\t{}\t{}", p.t_start, p.t_end, p.score);
        }
        let _ = writeln!(dump);
    }
    let path = out.join("preds.tsv");
    std::fs::write(&path, dump)?;
    write_record(out, "infer", cfg, &[("split", split.tag().to_string())])?;
    println!("infer[{}]: {} queries -> {}", split.tag(), feats.len(), path.display());
    Ok(path)
}

/// Parse a prediction dump: query id then `(t_start, t_end, score)` triples.
pub fn parse_predictions(path: &Path) -> Result<IndexMap<String, Vec<(f64, f64, f64)>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = IndexMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts
            .next()
            .ok_or_else(|| Error::InvalidArg(format!("line {}: empty", lineno + 1)))?
            .to_string();
        let rest: Vec<&str> = parts.collect();
        if rest.len() % 3 != 0 {
            return Err(Error::InvalidArg(format!(
                "line {}: {} fields after the id (not triples)",
                lineno + 1,
                rest.len()
            )));
        }
        let mut triples = Vec::with_capacity(rest.len() / 3);
        for chunk in rest.chunks_exact(3) {
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::InvalidArg(format!("line {}: bad number `{s}`", lineno + 1)))
            };
            triples.push((parse(chunk[0])?, parse(chunk[1])?, parse(chunk[2])?));
        }
        out.insert(id, triples);
    }
    Ok(out)
}

/// Evaluate a prediction dump against the split's ground truth.
pub fn cmd_eval(cfg: &RunConfig, preds_path: &Path, out: &Path, split: Split) -> Result<EvalReport> {
    cfg.validate()?;
    let feats = load_features(&features_path(out, split))?;
    let preds = parse_predictions(preds_path)?;
    let mut ranked = Vec::with_capacity(feats.len());
    let mut gts = Vec::with_capacity(feats.len());
    for q in &feats {
        let spans: Vec<(f64, f64)> = preds
            .get(&q.id)
            .map(|v| v.iter().map(|&(s, e, _)| (s, e)).collect())
            .unwrap_or_default();
        ranked.push(spans);
        gts.push(q.gt);
    }
    let report = EvalReport::compute(&ranked, &gts, &cfg.eval_ks, &cfg.eval_thetas)?;
    let mut text = report.to_text();
    text.push('\n');
    text.push_str(&report.to_kv());
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("eval.csv"), report.to_csv())?;
    write_record(out, "eval", cfg, &[("split", split.tag().to_string())])?;
    println!("{}", report.to_text());
    Ok(report)
}

/// Published full-video encoder totals used as regression fixtures for the
/// composition arithmetic `total(c) = D_full + c·E_full` (TFLOPs).
pub const REFERENCE_COMPOSITIONS: [(&str, f64, f64, [(f64, f64); 2]); 2] = [
    ("reference-A", 21.6, 668.2, [(0.3, 222.1), (0.5, 355.7)]),
    ("reference-B", 64.8, 2071.8, [(0.3, 686.3), (0.5, 1100.7)]),
];

/// Analytic compute report: toy-profile totals plus the reference
/// compositions. Fails if the arithmetic drifts from the published totals by
/// more than 0.1.
pub fn cmd_flops_report(cfg: &RunConfig, out: &Path, sweep: &[f64]) -> Result<String> {
    cfg.validate()?;
    let t = cfg.data.t_range.1;
    let profile = ComputeProfile::measure(&cfg.sidekick, &cfg.expert, t);
    let per_clip_side = evalbench::flops_per_clip(&cfg.sidekick, true);
    let per_clip_exp = evalbench::flops_per_clip(&cfg.expert, false);

    let mut text = String::new();
    let _ = writeln!(text, "encoder compute report (analytic FLOPs = multiply-accumulates x2;");
    let _ = writeln!(text, "softmax/normalization/activation costs ignored)");
    let _ = writeln!(text);
    let _ = writeln!(text, "profile `{}`, video of {t} clips:", cfg.profile);
    let _ = writeln!(text, "  per-clip   sidekick {per_clip_side:>14.0}   expert {per_clip_exp:>14.0}   ratio {:.2}", per_clip_exp / per_clip_side);
    let _ = writeln!(text, "  full-video sidekick {:>14.0}   expert {:>14.0}", profile.sidekick_full, profile.expert_full);
    for &c in sweep {
        let _ = writeln!(
            text,
            "  total(c={c:.2}) = {:>14.0}  ({:.1}% of expert-only)",
            profile.total(c),
            100.0 * profile.total(c) / profile.expert_full
        );
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "reference compositions (TFLOPs), regression-checked:");
    let mut csv = String::from("name,d_full,e_full,c,total\n");
    for (name, d, e, rows) in REFERENCE_COMPOSITIONS {
        for (c, published) in rows {
            let got = evalbench::compose_total(d, e, c);
            if (got - published).abs() > 0.1 {
                return Err(Error::InvalidArg(format!(
                    "composition regression: {name} c={c}: computed {got:.2}, published {published}"
                )));
            }
            let _ = writeln!(
                text,
                "  {name}: D={d:>6.1} E={e:>7.1} c={c:.1} -> {got:>7.2} (published {published})"
            );
            let _ = writeln!(csv, "{name},{d},{e},{c},{got:.4}");
        }
    }
    for &c in sweep {
        let _ = writeln!(
            csv,
            "{},{:.4},{:.4},{c},{:.4}",
            cfg.profile, profile.sidekick_full, profile.expert_full, profile.total(c)
        );
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("flops.csv"), csv)?;
    std::fs::write(out.join("flops.txt"), &text)?;
    write_record(out, "flops-report", cfg, &[])?;
    Ok(text)
}

/// Convenience: run the full pipeline end to end under one out dir.
pub fn run_full_pipeline(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    cmd_gen_data(cfg, out)?;
    cmd_train_sidekick(cfg, out)?;
    cmd_select(cfg, out)?;
    cmd_extract(cfg, out)?;
    cmd_train_grounder(cfg, out)?;
    let preds = cmd_infer(cfg, out, Split::Val)?;
    cmd_eval(cfg, &preds, out, Split::Val)
}

/// Clip-selection policy for feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Saliency,
    Random,
    Uniform,
}

impl SelectionMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SelectionMethod::Saliency => "saliency",
            SelectionMethod::Random => "random",
            SelectionMethod::Uniform => "uniform",
        }
    }
}

/// Extract grounder inputs for a whole split without touching the disk.
/// `store` must hold sidekick, text, and expert parameters.
pub(crate) fn extract_in_memory(
    cfg: &RunConfig,
    data: &SplitData,
    store: &ParamStore,
    method: SelectionMethod,
    seed: u64,
) -> Result<Vec<QueryFeaturesOnDisk>> {
    let (sidekick, expert, text) = models(cfg);
    let ratio = cfg.selection_ratio;
    let per_query: Vec<Result<QueryFeaturesOnDisk>> = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let video = &data.videos[s.video_index];
            let t = video.len();
            let dense = sidekick.encode(store, video)?;
            let q = text.encode(store, &s.tokens)?;
            let scores = compute_saliency(&dense, &q)?;
            let selected = match method {
                SelectionMethod::Saliency => crate::saliency::select_top_c(scores.data(), ratio)?,
                SelectionMethod::Random => {
                    evalbench::baseline_select(t, ratio, BaselineMode::Random, seed ^ (i as u64))?
                }
                SelectionMethod::Uniform => evalbench::baseline_select(t, ratio, BaselineMode::Uniform, 0)?,
            };
            let clips: Vec<&RawClip> = selected.iter().map(|&c| &video[c]).collect();
            let salient_rows = expert.encode_with_origin(store, &clips, selected.clone())?;
            let salient = pad_salient(&salient_rows, &selected, t)?;
            Ok(QueryFeaturesOnDisk {
                id: s.id.clone(),
                inputs: GroundInputs {
                    dense: dense.features,
                    salient,
                    scores,
                    query: q.stacked(),
                },
                gt: s.span,
            })
        })
        .collect();
    per_query.into_iter().collect()
}

/// Train a grounder on in-memory features and report validation recall.
pub(crate) fn grounder_train_eval_in_memory(
    cfg: &RunConfig,
    train_feats: &[QueryFeaturesOnDisk],
    val_feats: &[QueryFeaturesOnDisk],
) -> Result<EvalReport> {
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let mut ps = ParamStore::new(cfg.seed ^ GROUNDER_SEED_SALT);
    model.init(&mut ps);
    let mut stream = BatchStream::new(train_feats.len(), cfg.seed ^ GROUNDER_SEED_SALT);
    let mut opt = cfg.grounder_train.build_optimizer();
    for _ in 0..cfg.grounder_train.steps {
        let idx = stream.next_batch(cfg.grounder_train.batch);
        let batch: Vec<GrounderExample> = idx
            .iter()
            .map(|&i| GrounderExample {
                inputs: model.masked_inputs(&train_feats[i].inputs),
                gt: train_feats[i].gt,
            })
            .collect();
        grounder_train_step(&mut ps, &mut opt, &model, &batch)?;
    }
    let proposals: Vec<Result<Vec<MomentProposal>>> = val_feats
        .par_iter()
        .map(|q| model.ground(&ps, &model.masked_inputs(&q.inputs)))
        .collect();
    let mut ranked = Vec::with_capacity(val_feats.len());
    let mut gts = Vec::with_capacity(val_feats.len());
    for (q, props) in val_feats.iter().zip(proposals) {
        ranked.push(props?.iter().map(|p| p.span()).collect::<Vec<_>>());
        gts.push(q.gt);
    }
    EvalReport::compute(&ranked, &gts, &cfg.eval_ks, &cfg.eval_thetas)
}

/// Re-encode one query in memory: dense features, query features, and the
/// saliency scores (used by examples and tests).
pub fn encode_query(
    cfg: &RunConfig,
    store: &ParamStore,
    video: &[RawClip],
    tokens: &[usize],
) -> Result<(Tensor, QueryFeatures, Tensor)> {
    let (sidekick, _, text) = models(cfg);
    let dense = sidekick.encode(store, video)?;
    let q = text.encode(store, tokens)?;
    let scores = compute_saliency(&dense, &q)?;
    Ok((dense.features, q, scores))
}

pub fn split_data_gt(data: &SplitData) -> Vec<(f64, f64)> {
    data.samples.iter().map(|s| s.span).collect()
}
