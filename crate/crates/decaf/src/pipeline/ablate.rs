//! Ablation presets: feature combinations, selection baselines, the two
//! grounder components, and sidekick pooling/interpolation/loss knobs.
//!
//! Each preset runs on a reduced copy of the active profile (smaller videos,
//! fewer queries, shorter schedules) so a full sweep stays desk-scale. The
//! dataset is fixed across variants; the listed seeds change model
//! initialization and batch order only.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalbench;
use crate::synthdata::{self, Split, SplitData};

use super::{
    extract_in_memory, grounder_train_eval_in_memory, train_sidekick_core, write_record,
    SelectionMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblatePreset {
    /// Grounder input combinations: dense, salient, both, both + scores.
    Features,
    /// Random vs uniform vs saliency clip selection.
    Selection,
    /// Query-aware aggregation and multi-scale refinement on/off.
    QtaMtr,
    /// Sidekick pooling location, sampling stride, and loss terms.
    TauPool,
}

impl std::str::FromStr for AblatePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(AblatePreset::Features),
            "selection" => Ok(AblatePreset::Selection),
            "qta-mtr" => Ok(AblatePreset::QtaMtr),
            "tau-pool" => Ok(AblatePreset::TauPool),
            other => Err(Error::InvalidArg(format!(
                "unknown ablation preset `{other}` (features | selection | qta-mtr | tau-pool)"
            ))),
        }
    }
}

impl AblatePreset {
    pub fn label(&self) -> &'static str {
        match self {
            AblatePreset::Features => "features",
            AblatePreset::Selection => "selection",
            AblatePreset::QtaMtr => "qta-mtr",
            AblatePreset::TauPool => "tau-pool",
        }
    }
}

/// Reduced configuration for ablation sweeps. Deliberately harder than the
/// benchmark profile: several distractor spans per video and a tight
/// selection budget keep both feature streams imperfect, so their
/// contributions separate instead of saturating.
fn ablate_config(base: &RunConfig) -> RunConfig {
    let mut cfg = base.clone();
    cfg.data.n_train = 200;
    cfg.data.n_val = 160;
    cfg.data.t_range = (40, 48);
    cfg.data.span_frac = (0.05, 0.08);
    cfg.data.distractors = 4;
    cfg.selection_ratio = 0.2;
    cfg.sidekick_train.steps = cfg.sidekick_train.steps.min(80);
    cfg.grounder_train.steps = cfg.grounder_train.steps.min(350);
    cfg.grounder_train.lr = cfg.grounder_train.lr.min(1.5e-3);
    cfg
}

/// Results of one ablation row, averaged over seeds.
#[derive(Debug, Clone)]
pub struct AblateRow {
    pub name: String,
    pub avg: f64,
    pub per_seed: Vec<f64>,
    /// Extra metric column (selection recall or TFLOPs) when applicable.
    pub extra: Option<(String, f64)>,
}

fn grounded_rows(
    cfg: &RunConfig,
    variants: &[(&str, bool, bool, bool, bool, bool)],
    seeds: &[u64],
    train: &SplitData,
    val: &SplitData,
    method: SelectionMethod,
) -> Result<Vec<AblateRow>> {
    // one sidekick + one feature extraction shared by every variant and seed
    let side = train_sidekick_core(cfg, train, true)?;
    let train_feats = extract_in_memory(cfg, train, &side.store, method, cfg.seed)?;
    let val_feats = extract_in_memory(cfg, val, &side.store, method, cfg.seed.wrapping_add(1))?;
    let mut sel_recall = 0.0;
    for (f, s) in val_feats.iter().zip(&val.samples) {
        let t = val.videos[s.video_index].len();
        let width = cfg.sidekick.d_model;
        let sel: Vec<usize> = f
            .inputs
            .salient
            .data()
            .chunks(width)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
            .map(|(i, _)| i)
            .collect();
        sel_recall += evalbench::selection_recall(&sel, s.span, t)?;
    }
    println!(
        "  ablate shared features: selection recall {:.1} at c={}",
        sel_recall / val.samples.len() as f64,
        cfg.selection_ratio
    );

    let mut rows = Vec::new();
    for &(name, dense, salient, scores, qta, mtr) in variants {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.grounder.use_dense = dense;
            c.grounder.use_salient = salient;
            c.grounder.use_scores = scores;
            c.grounder.use_qta = qta;
            c.grounder.use_mtr = mtr;
            let report = grounder_train_eval_in_memory(&c, &train_feats, &val_feats)?;
            per_seed.push(report.avg);
            println!("  ablate {name} seed {seed}: AVG {:.2}", report.avg);
        }
        let avg = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        rows.push(AblateRow {
            name: name.to_string(),
            avg,
            per_seed,
            extra: None,
        });
    }
    Ok(rows)
}

fn selection_rows(
    cfg: &RunConfig,
    seeds: &[u64],
    train: &SplitData,
    val: &SplitData,
) -> Result<Vec<AblateRow>> {
    let side = train_sidekick_core(cfg, train, true)?;
    let mut rows = Vec::new();
    for method in [SelectionMethod::Random, SelectionMethod::Uniform, SelectionMethod::Saliency] {
        let train_feats = extract_in_memory(cfg, train, &side.store, method, cfg.seed)?;
        let val_feats = extract_in_memory(cfg, val, &side.store, method, cfg.seed.wrapping_add(1))?;
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let report = grounder_train_eval_in_memory(&c, &train_feats, &val_feats)?;
            per_seed.push(report.avg);
            println!("  ablate selection/{} seed {seed}: AVG {:.2}", method.label(), report.avg);
        }
        let avg = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        // selection recall of the method itself, over the validation split
        let mut recall = 0.0;
        for (i, s) in val.samples.iter().enumerate() {
            let t = val.videos[s.video_index].len();
            let sel = match method {
                SelectionMethod::Saliency => {
                    let feats = &val_feats[i];
                    feats
                        .inputs
                        .salient
                        .data()
                        .chunks(feats.inputs.dense.shape()[1])
                        .enumerate()
                        .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
                        .map(|(idx, _)| idx)
                        .collect()
                }
                SelectionMethod::Random => evalbench::baseline_select(
                    t,
                    cfg.selection_ratio,
                    evalbench::BaselineMode::Random,
                    cfg.seed.wrapping_add(1) ^ (i as u64),
                )?,
                SelectionMethod::Uniform => {
                    evalbench::baseline_select(t, cfg.selection_ratio, evalbench::BaselineMode::Uniform, 0)?
                }
            };
            recall += evalbench::selection_recall(&sel, s.span, t)?;
        }
        recall /= val.samples.len() as f64;
        rows.push(AblateRow {
            name: method.label().to_string(),
            avg,
            per_seed,
            extra: Some(("sel_recall".to_string(), recall)),
        });
    }
    Ok(rows)
}

fn tau_pool_rows(cfg: &RunConfig, train: &SplitData) -> Result<Vec<AblateRow>> {
    struct Variant {
        name: &'static str,
        pool_block: usize,
        tau: usize,
        w_sal: f64,
        w_dist: f64,
    }
    let base_w = cfg.loss_weights;
    let mut variants = vec![
        Variant { name: "pool@1 tau=2 (default)", pool_block: 1, tau: 2, w_sal: base_w.saliency, w_dist: base_w.distill },
        Variant { name: "pool@2 tau=2", pool_block: 2, tau: 2, w_sal: base_w.saliency, w_dist: base_w.distill },
        Variant { name: "pool@1 tau=1", pool_block: 1, tau: 1, w_sal: base_w.saliency, w_dist: base_w.distill },
        Variant { name: "pool@1 tau=3", pool_block: 1, tau: 3, w_sal: base_w.saliency, w_dist: base_w.distill },
        Variant { name: "no saliency loss", pool_block: 1, tau: 2, w_sal: 0.0, w_dist: base_w.distill },
        Variant { name: "no distill loss", pool_block: 1, tau: 2, w_sal: base_w.saliency, w_dist: 0.0 },
    ];
    if cfg.sidekick.n_blocks >= 3 {
        variants.insert(2, Variant { name: "pool@3 tau=2", pool_block: 3, tau: 2, w_sal: base_w.saliency, w_dist: base_w.distill });
    }

    let mut rows = Vec::new();
    for v in &variants {
        let mut c = cfg.clone();
        c.sidekick.pool_block_index = v.pool_block;
        c.sidekick.tau = v.tau;
        c.loss_weights.saliency = v.w_sal;
        c.loss_weights.distill = v.w_dist;
        c.validate()?;
        let side = train_sidekick_core(&c, train, true)?;
        // selection recall at the configured ratio over the training split
        let feats = extract_in_memory(&c, train, &side.store, SelectionMethod::Saliency, c.seed)?;
        let width = c.sidekick.d_model;
        let mut recall = 0.0;
        for (f, s) in feats.iter().zip(&train.samples) {
            let t = train.videos[s.video_index].len();
            let sel: Vec<usize> = f
                .inputs
                .salient
                .data()
                .chunks(width)
                .enumerate()
                .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
                .map(|(i, _)| i)
                .collect();
            recall += evalbench::selection_recall(&sel, s.span, t)?;
        }
        recall /= train.samples.len() as f64;
        let tflops = evalbench::flops_sidekick_video(&c.sidekick, c.data.t_range.1);
        println!("  ablate {}: recall {:.1} flops {:.3e}", v.name, recall, tflops);
        rows.push(AblateRow {
            name: v.name.to_string(),
            avg: recall,
            per_seed: vec![recall],
            extra: Some(("video_flops".to_string(), tflops)),
        });
    }
    Ok(rows)
}

fn render(preset: AblatePreset, metric: &str, rows: &[AblateRow]) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "ablation preset: {}", preset.label());
    let _ = writeln!(text, "{:<28} {:>10}  {:<18} per-seed", "variant", metric, "extra");
    for r in rows {
        let extra = r
            .extra
            .as_ref()
            .map(|(k, v)| format!("{k}={v:.4e}"))
            .unwrap_or_default();
        let seeds = r
            .per_seed
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(text, "{:<28} {:>10.2}  {:<18} [{seeds}]", r.name, r.avg, extra);
    }
    text
}

/// Run an ablation preset on the reduced configuration derived from `cfg`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, preset: AblatePreset) -> Result<Vec<AblateRow>> {
    cfg.validate()?;
    ablate_with_config(&ablate_config(cfg), out, preset)
}

/// Run an ablation preset with `cfg` exactly as given.
pub fn ablate_with_config(cfg: &RunConfig, out: &Path, preset: AblatePreset) -> Result<Vec<AblateRow>> {
    cfg.validate()?;
    let cfg = cfg.clone();
    let root = out.join(format!("ablate-{}", preset.label()));
    std::fs::create_dir_all(&root)?;
    let dir = root.join("dataset");
    let manifest = synthdata::generate(&cfg.data, &dir)?;
    let train = synthdata::load_split(&manifest, Split::Train)?;
    let val = synthdata::load_split(&manifest, Split::Val)?;
    let seeds = [cfg.seed, cfg.seed + 1, cfg.seed + 2];

    let (rows, metric) = match preset {
        AblatePreset::Features => {
            let variants: [(&str, bool, bool, bool, bool, bool); 4] = [
                ("dense only", true, false, false, true, true),
                ("salient only", false, true, false, true, true),
                ("dense+salient", true, true, false, true, true),
                ("dense+salient+scores", true, true, true, true, true),
            ];
            (
                grounded_rows(&cfg, &variants, &seeds, &train, &val, SelectionMethod::Saliency)?,
                "AVG recall",
            )
        }
        AblatePreset::QtaMtr => {
            let variants: [(&str, bool, bool, bool, bool, bool); 3] = [
                ("refinement only", true, true, true, false, true),
                ("aggregation only", true, true, true, true, false),
                ("both", true, true, true, true, true),
            ];
            (
                grounded_rows(&cfg, &variants, &seeds, &train, &val, SelectionMethod::Saliency)?,
                "AVG recall",
            )
        }
        AblatePreset::Selection => (selection_rows(&cfg, &seeds, &train, &val)?, "AVG recall"),
        AblatePreset::TauPool => (tau_pool_rows(&cfg, &train)?, "sel recall"),
    };

    let text = render(preset, metric, &rows);
    std::fs::write(root.join("table.txt"), &text)?;
    let mut csv = String::from("variant,mean,extra\n");
    for r in &rows {
        let extra = r.extra.as_ref().map(|(_, v)| *v).unwrap_or(f64::NAN);
        let _ = writeln!(csv, "{},{:.4},{:.6e}", r.name, r.avg, extra);
    }
    std::fs::write(root.join("table.csv"), csv)?;
    write_record(&root, "ablate", &cfg, &[("preset", preset.label().to_string())])?;
    println!("{text}");
    Ok(rows)
}
