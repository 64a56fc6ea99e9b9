//! Train the sidekick encoder and compare its clip selection against random
//! and uniform baselines.
//!
//! ```bash
//! cargo run --release -p decaf --example train_sidekick
//! ```

use decaf::config::RunConfig;
use decaf::pipeline;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::test_profile();
    cfg.data.n_train = 48;
    cfg.data.n_val = 16;
    cfg.sidekick_train.steps = 120;
    let out = std::path::Path::new("out/examples/train_sidekick");

    pipeline::cmd_gen_data(&cfg, out)?;
    let summary = pipeline::cmd_train_sidekick(&cfg, out)?;
    println!(
        "loss {:.3} -> {:.3} over {} steps",
        summary.first_loss, summary.final_loss, summary.steps
    );

    let selection = pipeline::cmd_select(&cfg, out)?;
    for (split, (learned, random, uniform)) in &selection.recalls {
        println!(
            "{split}: learned {learned:.1} vs random {random:.1} vs uniform {uniform:.1} (selection recall, c={})",
            cfg.selection_ratio
        );
    }
    Ok(())
}
