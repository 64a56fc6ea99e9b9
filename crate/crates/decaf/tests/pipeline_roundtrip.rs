//! Pipeline-level contracts on the seconds-scale profile: determinism,
//! idempotence, and file round-trips.

use decaf::config::RunConfig;
use decaf::evalbench::EvalReport;
use decaf::grounder::GrounderModel;
use decaf::pipeline;
use decaf::synthdata::{container, Split};

fn file_bytes(p: &std::path::Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

#[test]
fn full_test_profile_pipeline_is_deterministic_and_idempotent() {
    let cfg = RunConfig::test_profile();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    pipeline::cmd_gen_data(&cfg, out).unwrap();
    let train1 = file_bytes(&out.join("dataset/train.dcf"));
    pipeline::cmd_gen_data(&cfg, out).unwrap();
    assert_eq!(train1, file_bytes(&out.join("dataset/train.dcf")), "gen-data not idempotent");

    pipeline::cmd_train_sidekick(&cfg, out).unwrap();
    let ckpt1 = file_bytes(&out.join("ckpt/sidekick.dcf"));
    pipeline::cmd_train_sidekick(&cfg, out).unwrap();
    assert_eq!(ckpt1, file_bytes(&out.join("ckpt/sidekick.dcf")), "training not reproducible");

    pipeline::cmd_select(&cfg, out).unwrap();
    pipeline::cmd_extract(&cfg, out).unwrap();
    pipeline::cmd_train_grounder(&cfg, out).unwrap();

    let preds = pipeline::cmd_infer(&cfg, out, Split::Val).unwrap();
    let dump1 = file_bytes(&preds);
    pipeline::cmd_infer(&cfg, out, Split::Val).unwrap();
    assert_eq!(dump1, file_bytes(&preds), "inference not reproducible");

    // evaluating the dump must equal in-process evaluation
    let report_from_file = pipeline::cmd_eval(&cfg, &preds, out, Split::Val).unwrap();
    let feats = pipeline::load_features(&out.join("features-val.dcf")).unwrap();
    let store = container::load_param_store(&out.join("ckpt/grounder.dcf"), cfg.seed).unwrap();
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let mut ranked = Vec::new();
    let mut gts = Vec::new();
    for q in &feats {
        let props = model.ground(&store, &model.masked_inputs(&q.inputs)).unwrap();
        ranked.push(props.iter().map(|p| p.span()).collect::<Vec<_>>());
        gts.push(q.gt);
    }
    let report_in_process = EvalReport::compute(&ranked, &gts, &cfg.eval_ks, &cfg.eval_thetas).unwrap();
    assert_eq!(report_from_file.cells, report_in_process.cells, "file round-trip changed the metrics");

    // the dump format itself: one line per query, triples after the id
    let parsed = pipeline::parse_predictions(&preds).unwrap();
    assert_eq!(parsed.len(), feats.len());
    for (id, triples) in &parsed {
        assert!(triples.len() <= cfg.grounder.top_k, "{id} has too many proposals");
        for &(ts, te, score) in triples {
            assert!(ts < te && (0.0..=1.0).contains(&score));
        }
    }
}

#[test]
fn checkpoints_round_trip_through_the_container() {
    let cfg = RunConfig::test_profile();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline::cmd_gen_data(&cfg, out).unwrap();
    pipeline::cmd_train_sidekick(&cfg, out).unwrap();

    let store = container::load_param_store(&out.join("ckpt/sidekick.dcf"), cfg.seed).unwrap();
    assert!(store.names().any(|n| n.starts_with("sidekick.")));
    assert!(store.names().any(|n| n.starts_with("text.")));
    // saving the loaded store reproduces the file byte for byte
    let copy = out.join("ckpt/copy.dcf");
    container::save_param_store(&copy, &store).unwrap();
    assert_eq!(file_bytes(&out.join("ckpt/sidekick.dcf")), file_bytes(&copy));
}

#[test]
fn cli_binary_runs_the_batch_surface() {
    let bin = env!("CARGO_BIN_EXE_decaf");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let run = |args: &[&str]| {
        let output = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("spawning decaf");
        assert!(
            output.status.success(),
            "decaf {args:?} failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8_lossy(&output.stdout).to_string()
    };

    run(&["--profile", "test", "--out", out, "gen-data"]);
    run(&["--profile", "test", "--out", out, "train-sidekick"]);
    run(&["--profile", "test", "--out", out, "select", "--ratio", "0.5"]);
    run(&["--profile", "test", "--out", out, "extract"]);
    run(&["--profile", "test", "--out", out, "train-grounder"]);
    run(&["--profile", "test", "--out", out, "infer", "--split", "val"]);
    let eval_out = run(&["--profile", "test", "--out", out, "eval", "--split", "val"]);
    assert!(eval_out.contains("AVG"), "eval output missing table:\n{eval_out}");
    let flops_out = run(&["--profile", "test", "--out", out, "flops-report", "--sweep", "0.3,0.5"]);
    assert!(flops_out.contains("222.1"), "missing reference row:\n{flops_out}");

    for artifact in [
        "dataset/manifest.txt",
        "ckpt/sidekick.dcf",
        "ckpt/expert.dcf",
        "ckpt/grounder.dcf",
        "saliency-train.dcf",
        "features-val.dcf",
        "preds.tsv",
        "report.txt",
        "flops.csv",
        "selection.txt",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing artifact {artifact}");
    }

    // config file + env var override for the dataset location
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "profile=test\nsidekick.tau=3\n").unwrap();
    let data_dir = dir.path().join("elsewhere");
    let output = std::process::Command::new(bin)
        .env("DECAF_DATA_DIR", &data_dir)
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out, "gen-data"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(data_dir.join("manifest.txt").exists(), "DECAF_DATA_DIR not honored");
}
