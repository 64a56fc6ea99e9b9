//! The whole pipeline in one call on the seconds-scale profile:
//! generation → sidekick training → selection → extraction → grounder
//! training → inference → evaluation.
//!
//! ```bash
//! cargo run --release -p decaf --example end_to_end
//! ```

use decaf::config::RunConfig;
use decaf::pipeline;

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::test_profile();
    let out = std::path::Path::new("out/examples/end_to_end");
    let report = pipeline::run_full_pipeline(&cfg, out)?;
    println!("artifacts under {}", out.display());
    println!("held-out AVG recall {:.2} over {} queries", report.avg, report.queries);
    Ok(())
}
