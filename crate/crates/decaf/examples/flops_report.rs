//! Analytic encoder-compute accounting: per-clip and per-video totals, the
//! sidekick/expert ratio, and the composition sweep `total(c) = D + c·E`.
//!
//! ```bash
//! cargo run --release -p decaf --example flops_report
//! ```

use decaf::config::RunConfig;
use decaf::evalbench;
use decaf::pipeline;

fn main() -> anyhow::Result<()> {
    let out = std::path::Path::new("out/examples/flops_report");
    for profile in ["test", "demo", "paper-default"] {
        let cfg = RunConfig::named_profile(profile)?;
        let text = pipeline::cmd_flops_report(&cfg, &out.join(profile), &[0.3, 0.5])?;
        println!("{text}");
    }

    // how the per-video sidekick cost scales with the sampling stride
    let cfg = RunConfig::demo_profile();
    let t = 64;
    println!("sidekick per-video FLOPs vs sampling stride (T={t}):");
    for tau in [1usize, 2, 3, 4] {
        let mut s = cfg.sidekick.clone();
        s.tau = tau;
        println!("  tau={tau}: {:>12.0}", evalbench::flops_sidekick_video(&s, t));
    }
    Ok(())
}
