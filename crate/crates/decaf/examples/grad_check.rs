//! Verify analytic gradients of both trainable stacks against central finite
//! differences, exactly as the test suite does.
//!
//! ```bash
//! cargo run --release -p decaf --example grad_check
//! ```

use decaf::config::RunConfig;
use decaf::encoders::{RawClip, SidekickModel, TextModel};
use decaf::grounder::{GroundInputs, GrounderModel};
use decaf::numerics::{grad_check, GradCheckSettings, ParamStore, Tensor};
use decaf::saliency::{distill_loss_var, saliency_loss_var, ContrastivePairing};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::test_profile();
    let settings = GradCheckSettings {
        eps: 1e-5,
        tol: 1e-3,
        coords_per_param: 16,
        seed: 11,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // --- sidekick + saliency + distillation ---
    let sidekick = SidekickModel::new("sidekick", cfg.sidekick.clone());
    let text = TextModel::new("text", cfg.vocab(), cfg.sidekick.d_model, cfg.sidekick.n_heads, cfg.text_max_tokens);
    let mut ps = ParamStore::new(3);
    sidekick.init(&mut ps);
    text.init(&mut ps);
    let dims = cfg.data.clip;
    let video: Vec<RawClip> = (0..4)
        .map(|_| {
            let data = (0..dims.pixels()).map(|_| rng.gen_range(0.0..1.0)).collect();
            RawClip::new(Tensor::new(dims.shape(), data).unwrap(), dims).unwrap()
        })
        .collect();
    let video_b = video[..3].to_vec();
    let expert_a = Tensor::new(vec![4, 8], (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
    let expert_b = Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
    let pairing_a = ContrastivePairing::from_span((1.0, 3.0), 4)?;
    let pairing_b = ContrastivePairing::from_span((0.0, 1.0), 3)?;
    let report = grad_check(
        &ps,
        |s| {
            let fa = sidekick.encode_var(s, &video).unwrap();
            let fb = sidekick.encode_var(s, &video_b).unwrap();
            let (qa, _) = text.encode_var(s, &[2, 5]).unwrap();
            let (qb, _) = text.encode_var(s, &[3, 6]).unwrap();
            let (sal, _) = saliency_loss_var(s, &[fa, fb], &[qa, qb], &[pairing_a.clone(), pairing_b.clone()], 0.07)
                .unwrap();
            let da = distill_loss_var(s, fa, &expert_a).unwrap();
            let db = distill_loss_var(s, fb, &expert_b).unwrap();
            let d = s.add(da, db);
            let d = s.scale(d, 0.5 * 0.75);
            s.add(sal, d)
        },
        settings,
    );
    println!("sidekick + saliency + distillation:\n{}\n", report.summary());

    // --- grounder + focal + DIoU ---
    let model = GrounderModel::new("grounder", cfg.grounder.clone());
    let mut ps = ParamStore::new(4);
    model.init(&mut ps);
    let (t, c) = (8, cfg.grounder.d_model);
    let inputs = GroundInputs {
        dense: Tensor::new(vec![t, c], (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
        salient: Tensor::new(vec![t, c], (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
        scores: Tensor::new(vec![t], (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
        query: Tensor::new(vec![3, c], (0..3 * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
    };
    let report = grad_check(
        &ps,
        |s| {
            let (loss, _, _) = model.loss_var(s, &inputs, (2.0, 5.0)).unwrap();
            loss
        },
        settings,
    );
    println!("grounder + focal + DIoU:\n{}", report.summary());
    Ok(())
}
