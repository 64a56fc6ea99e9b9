//! Full grounding demo: train both stages on a small set, then print the
//! top proposals next to the ground truth for a few held-out queries.
//!
//! ```bash
//! cargo run --release -p decaf --example ground_moments
//! ```

use decaf::config::RunConfig;
use decaf::evalbench::iou;
use decaf::pipeline;
use decaf::synthdata::Split;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::test_profile();
    cfg.data.n_train = 64;
    cfg.data.n_val = 16;
    cfg.data.t_range = (16, 24);
    cfg.grounder.scales = 2;
    cfg.sidekick_train.steps = 120;
    cfg.grounder_train.steps = 200;
    let out = std::path::Path::new("out/examples/ground_moments");

    pipeline::cmd_gen_data(&cfg, out)?;
    pipeline::cmd_train_sidekick(&cfg, out)?;
    pipeline::cmd_select(&cfg, out)?;
    pipeline::cmd_extract(&cfg, out)?;
    pipeline::cmd_train_grounder(&cfg, out)?;
    let preds = pipeline::cmd_infer(&cfg, out, Split::Val)?;
    let report = pipeline::cmd_eval(&cfg, &preds, out, Split::Val)?;

    println!("held-out AVG recall: {:.1}", report.avg);
    let parsed = pipeline::parse_predictions(&preds)?;
    let feats = pipeline::load_features(&out.join("features-val.dcf"))?;
    for q in feats.iter().take(4) {
        println!("query {} (gt {:.0}..{:.0}):", q.id, q.gt.0, q.gt.1);
        if let Some(triples) = parsed.get(&q.id) {
            for (rank, &(ts, te, score)) in triples.iter().take(3).enumerate() {
                println!(
                    "  #{rank}: {ts:6.2}..{te:6.2}  score {score:.3}  IoU {:.2}",
                    iou((ts, te), q.gt).unwrap_or(0.0)
                );
            }
        }
    }
    Ok(())
}
