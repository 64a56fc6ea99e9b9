//! Training-dynamics contracts at seconds scale: step semantics, loss
//! descent, and the contribution of each sidekick loss term.

use decaf::config::RunConfig;
use decaf::encoders::{RawClip, SidekickModel, TextModel};
use decaf::grounder::{grounder_train_step, GroundInputs, GrounderExample, GrounderModel};
use decaf::numerics::{Optimizer, OptimizerKind, ParamStore, Tensor};
use decaf::saliency::{sidekick_train_step, ContrastivePairing, LossWeights, SidekickExample};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixed_batch_setup() -> (RunConfig, SidekickModel, TextModel, ParamStore, Vec<Vec<RawClip>>, Vec<Tensor>) {
    let cfg = RunConfig::test_profile();
    let sidekick = SidekickModel::new("sidekick", cfg.sidekick.clone());
    let text = TextModel::new(
        "text",
        cfg.vocab(),
        cfg.sidekick.d_model,
        cfg.sidekick.n_heads,
        cfg.text_max_tokens,
    );
    let mut ps = ParamStore::new(0xbead);
    sidekick.init(&mut ps);
    text.init(&mut ps);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = cfg.data.clip;
    let videos: Vec<Vec<RawClip>> = (0..4)
        .map(|_| {
            (0..6)
                .map(|_| {
                    let data = (0..dims.pixels()).map(|_| rng.gen_range(0.0..1.0)).collect();
                    RawClip::new(Tensor::new(dims.shape(), data).unwrap(), dims).unwrap()
                })
                .collect()
        })
        .collect();
    let experts: Vec<Tensor> = (0..4)
        .map(|_| Tensor::new(vec![6, 8], (0..48).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap())
        .collect();
    (cfg, sidekick, text, ps, videos, experts)
}

fn batch<'a>(videos: &'a [Vec<RawClip>], experts: &'a [Tensor]) -> Vec<SidekickExample<'a>> {
    let spans = [(1.0, 3.0), (2.0, 4.0), (0.0, 2.0), (3.0, 5.0)];
    videos
        .iter()
        .zip(experts)
        .zip(spans)
        .enumerate()
        .map(|(i, ((v, e), span))| SidekickExample {
            video: v,
            tokens: match i % 2 {
                0 => &[2, 5],
                _ => &[3, 6],
            },
            pairing: ContrastivePairing::from_span(span, 6).unwrap(),
            expert_features: e,
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (_, sidekick, text, mut ps, videos, experts) = fixed_batch_setup();
    let before = ps.clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0);
    sidekick_train_step(&mut ps, &mut opt, &sidekick, &text, &batch(&videos, &experts), LossWeights::default())
        .unwrap();
    for name in before.names() {
        assert_eq!(before.get(name), ps.get(name), "{name} changed at lr 0");
    }
}

#[test]
fn sidekick_loss_decreases_on_fixed_batch() {
    let (_, sidekick, text, mut ps, videos, experts) = fixed_batch_setup();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..50 {
        let stats = sidekick_train_step(
            &mut ps,
            &mut opt,
            &sidekick,
            &text,
            &batch(&videos, &experts),
            LossWeights::default(),
        )
        .unwrap();
        first.get_or_insert(stats.total_loss);
        last = stats.total_loss;
    }
    let first = first.unwrap();
    assert!(
        last < 0.6 * first,
        "loss did not decrease: {first:.4} -> {last:.4}"
    );
}

#[test]
fn grounder_loss_decreases_on_fixed_batch() {
    let cfg = RunConfig::test_profile();
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let mut ps = ParamStore::new(0xfade);
    model.init(&mut ps);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, c) = (8usize, 8usize);
    let examples: Vec<GrounderExample> = (0..4)
        .map(|i| GrounderExample {
            inputs: GroundInputs {
                dense: Tensor::new(vec![t, c], (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                salient: Tensor::new(vec![t, c], (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap(),
                scores: Tensor::new(vec![t], (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                query: Tensor::new(vec![3, c], (0..3 * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            },
            gt: ((i % 3) as f64, (i % 3) as f64 + 2.0),
        })
        .collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 2e-3);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..60 {
        let stats = grounder_train_step(&mut ps, &mut opt, &model, &examples).unwrap();
        first.get_or_insert(stats.total);
        last = stats.total;
    }
    assert!(last < 0.5 * first.unwrap(), "loss {:?} -> {last}", first);
}

#[test]
fn dropping_the_saliency_loss_degrades_selection() {
    // directional check at small scale: without the contrastive term the
    // selector cannot learn query-clip similarity
    use decaf::pipeline;
    use decaf::synthdata;

    let mut cfg = RunConfig::test_profile();
    cfg.data.n_train = 40;
    cfg.data.n_val = 8;
    cfg.data.t_range = (12, 16);
    cfg.sidekick_train.steps = 120;
    cfg.sidekick_train.optimizer = OptimizerKind::Adam;
    cfg.sidekick_train.lr = 1e-3;

    let dir = tempfile::tempdir().unwrap();
    pipeline::cmd_gen_data(&cfg, dir.path()).unwrap();
    let manifest = synthdata::DatasetManifest::load(&dir.path().join("dataset")).unwrap();
    let _ = manifest;

    pipeline::cmd_train_sidekick(&cfg, dir.path()).unwrap();
    let with_sal = pipeline::cmd_select(&cfg, dir.path()).unwrap().recalls["train"].0;

    let mut no_sal = cfg.clone();
    no_sal.loss_weights.saliency = 0.0;
    let dir2 = tempfile::tempdir().unwrap();
    pipeline::cmd_gen_data(&no_sal, dir2.path()).unwrap();
    pipeline::cmd_train_sidekick(&no_sal, dir2.path()).unwrap();
    let without_sal = pipeline::cmd_select(&no_sal, dir2.path()).unwrap().recalls["train"].0;

    assert!(
        with_sal > without_sal + 5.0,
        "saliency loss should matter: with {with_sal:.1} vs without {without_sal:.1}"
    );
}
