//! Scratch tuning harness (not part of the deliverable).

use decaf::config::RunConfig;
use decaf::pipeline::{self, AblatePreset};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let distr: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let ratio: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
    let t_lo: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32);
    let preset: AblatePreset = args
        .get(6)
        .map(|s| s.parse().unwrap())
        .unwrap_or(AblatePreset::Features);

    let mut cfg = RunConfig::demo_profile();
    cfg.data.n_train = 200;
    cfg.data.n_val = 160;
    cfg.data.span_frac = (0.05, 0.08);
    cfg.grounder_train.steps = steps;
    cfg.grounder_train.lr = lr;
    cfg.sidekick_train.steps = 80;
    cfg.data.distractors = distr;
    cfg.selection_ratio = ratio;
    cfg.data.t_range = (t_lo, t_lo + 8);

    let out = std::path::PathBuf::from(format!("/tmp/tune-{steps}-{lr}-{distr}-{ratio}-{t_lo}"));
    let rows = pipeline::ablate_with_config(&cfg, &out, preset)?;
    for r in &rows {
        println!("ROW {:<26} mean {:.2} seeds {:?}", r.name, r.avg, r.per_seed);
    }
    Ok(())
}
