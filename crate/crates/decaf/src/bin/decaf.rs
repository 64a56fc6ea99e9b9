//! Batch command-line frontend over the pipeline library.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use decaf::config::RunConfig;
use decaf::pipeline::{self, AblatePreset};
use decaf::synthdata::Split;

#[derive(Parser)]
#[command(name = "decaf", version, about = "Delegate-and-conquer temporal grounding on synthetic benchmarks")]
struct Cli {
    /// Key=value config file; overrides the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in profile: test | demo | paper-default.
    #[arg(long, global = true, default_value = "test")]
    profile: String,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (videos, queries, ground truth).
    GenData,
    /// Train the sidekick + text encoders against the frozen expert.
    TrainSidekick,
    /// Score clips per query and select the top-c%.
    Select {
        /// Selection ratio override.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Extract dense + salient feature containers for both splits.
    Extract,
    /// Train the grounding head on extracted features.
    TrainGrounder,
    /// Dump ranked moment predictions for a split.
    Infer {
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Score a prediction dump against ground truth.
    Eval {
        /// Prediction file (defaults to <out>/preds.tsv).
        #[arg(long)]
        preds: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Analytic encoder-compute report with a selection-ratio sweep.
    FlopsReport {
        /// Comma-separated selection ratios.
        #[arg(long, default_value = "0.3,0.5")]
        sweep: String,
    },
    /// Run an ablation preset (features | selection | qta-mtr | tau-pool).
    Ablate {
        #[arg(long)]
        preset: String,
    },
    /// Full pipeline: gen-data through eval.
    RunAll,
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => anyhow::bail!("unknown split `{other}` (train | val)"),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("building worker pool")?;
    }

    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::named_profile(&cli.profile)?,
    };
    if let Some(seed) = cli.seed {
        cfg.apply_kv("seed", &seed.to_string())?;
    }
    cfg.jobs = cli.jobs;
    cfg.validate()?;
    let out = &cli.out;

    match cli.command {
        Command::GenData => {
            let manifest = pipeline::cmd_gen_data(&cfg, out)?;
            println!(
                "dataset: {} train / {} val queries under {}",
                manifest.params.n_train,
                manifest.params.n_val,
                manifest.dir.display()
            );
        }
        Command::TrainSidekick => {
            let summary = pipeline::cmd_train_sidekick(&cfg, out)?;
            println!(
                "sidekick trained: loss {:.4} -> {:.4} over {} steps ({})",
                summary.first_loss,
                summary.final_loss,
                summary.steps,
                summary.checkpoint.display()
            );
        }
        Command::Select { ratio } => {
            if let Some(r) = ratio {
                cfg.apply_kv("select.ratio", &r.to_string())?;
                cfg.validate()?;
            }
            pipeline::cmd_select(&cfg, out)?;
        }
        Command::Extract => pipeline::cmd_extract(&cfg, out)?,
        Command::TrainGrounder => {
            let summary = pipeline::cmd_train_grounder(&cfg, out)?;
            println!(
                "grounder trained: loss {:.4} -> {:.4} over {} steps ({})",
                summary.first_loss,
                summary.final_loss,
                summary.steps,
                summary.checkpoint.display()
            );
        }
        Command::Infer { split } => {
            pipeline::cmd_infer(&cfg, out, parse_split(&split)?)?;
        }
        Command::Eval { preds, split } => {
            let preds = preds.unwrap_or_else(|| out.join("preds.tsv"));
            pipeline::cmd_eval(&cfg, &preds, out, parse_split(&split)?)?;
        }
        Command::FlopsReport { sweep } => {
            let sweep: Vec<f64> = sweep
                .split(',')
                .map(|s| s.trim().parse::<f64>().context("parsing sweep ratio"))
                .collect::<anyhow::Result<_>>()?;
            let text = pipeline::cmd_flops_report(&cfg, out, &sweep)?;
            println!("{text}");
        }
        Command::Ablate { preset } => {
            let preset: AblatePreset = preset.parse()?;
            pipeline::cmd_ablate(&cfg, out, preset)?;
        }
        Command::RunAll => {
            let report = pipeline::run_full_pipeline(&cfg, out)?;
            println!("pipeline finished: AVG recall {:.2}", report.avg);
        }
    }
    Ok(())
}
