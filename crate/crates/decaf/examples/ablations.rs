//! Run one ablation preset at reduced scale. Pass a preset name to pick a
//! different sweep.
//!
//! ```bash
//! cargo run --release -p decaf --example ablations -- tau-pool
//! ```

use decaf::config::RunConfig;
use decaf::pipeline::{self, AblatePreset};

fn main() -> anyhow::Result<()> {
    let preset: AblatePreset = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "tau-pool".to_string())
        .parse()?;
    // The test profile keeps this fast; the acceptance suite runs the same
    // presets on the demo profile.
    let mut cfg = RunConfig::test_profile();
    cfg.sidekick_train.steps = 100;
    cfg.grounder_train.steps = 150;
    let out = std::path::Path::new("out/examples/ablations");
    let rows = pipeline::cmd_ablate(&cfg, out, preset)?;
    println!("{} rows written under {}", rows.len(), out.display());
    Ok(())
}
