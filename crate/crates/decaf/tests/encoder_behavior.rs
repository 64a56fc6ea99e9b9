//! Behavioral contracts of the three encoders.

use decaf::encoders::{
    sampled_indices, ClipDims, EncoderConfig, ExpertModel, RawClip, SidekickModel, TextModel,
};
use decaf::numerics::{ParamStore, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> ClipDims {
    ClipDims {
        frames: 4,
        height: 8,
        width: 8,
        channels: 3,
    }
}

fn cfg(tau: usize, pool: usize) -> EncoderConfig {
    EncoderConfig {
        n_blocks: 2,
        pool_block_index: 1,
        pool_factor: pool,
        tau,
        d_model: 16,
        n_heads: 2,
        patch: (1, 4, 4),
        clip: dims(),
    }
}

fn random_video(seed: u64, t: usize) -> Vec<RawClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| {
            let data = (0..dims().pixels()).map(|_| rng.gen_range(0.0..1.0)).collect();
            RawClip::new(Tensor::new(dims().shape(), data).unwrap(), dims()).unwrap()
        })
        .collect()
}

#[test]
fn sidekick_covers_all_positions_for_any_tau() {
    for tau in [1usize, 2, 3, 5] {
        for t in [1usize, 2, 5, 7, 8] {
            let model = SidekickModel::new("sidekick", cfg(tau, 2));
            let mut ps = ParamStore::new(42);
            model.init(&mut ps);
            let video = random_video(7, t);
            let out = model.encode(&ps, &video).unwrap();
            assert_eq!(out.features.shape(), &[t, 16], "tau={tau} t={t}");
            assert!(out.features.is_finite());
        }
    }
}

#[test]
fn sidekick_rejects_empty_video() {
    let model = SidekickModel::new("sidekick", cfg(2, 2));
    let mut ps = ParamStore::new(42);
    model.init(&mut ps);
    assert!(model.encode(&ps, &[]).is_err());
}

#[test]
fn tau_one_pool_one_sidekick_equals_expert_with_shared_weights() {
    // same parameter prefix: identical weights; no pooling, no interpolation
    let c = cfg(1, 1);
    let sidekick = SidekickModel::new("enc", c.clone());
    let expert = ExpertModel::new("enc", c);
    let mut ps = ParamStore::new(99);
    sidekick.init(&mut ps); // superset of expert params with pool disabled

    let video = random_video(3, 5);
    let s_out = sidekick.encode(&ps, &video).unwrap();
    let refs: Vec<&RawClip> = video.iter().collect();
    let e_out = expert.encode(&ps, &refs).unwrap();
    assert_eq!(s_out.features, e_out.features);
}

#[test]
fn tau_two_interpolates_interiors() {
    // T=5, tau=2: clips 0,2,4 encoded; 1,3 produced by the interpolation net.
    // Changing only clip 1's pixels must leave all encoded rows unchanged.
    let model = SidekickModel::new("sidekick", cfg(2, 2));
    let mut ps = ParamStore::new(5);
    model.init(&mut ps);

    assert_eq!(sampled_indices(5, 2), vec![0, 2, 4]);
    let video = random_video(11, 5);
    let out_a = model.encode(&ps, &video).unwrap();

    let mut video_b = video.clone();
    video_b[1] = random_video(999, 1).pop().unwrap();
    let out_b = model.encode(&ps, &video_b).unwrap();

    let c = 16;
    for t in [0usize, 2, 4] {
        assert_eq!(
            out_a.features.data()[t * c..(t + 1) * c],
            out_b.features.data()[t * c..(t + 1) * c],
            "encoded row {t} should ignore unsampled pixels"
        );
    }
    // interpolated rows depend only on neighbors, which did not change
    assert_eq!(out_a.features.data(), out_b.features.data());
}

#[test]
fn single_clip_video_encodes_directly() {
    let model = SidekickModel::new("sidekick", cfg(3, 2));
    let mut ps = ParamStore::new(5);
    model.init(&mut ps);
    let video = random_video(2, 1);
    let out = model.encode(&ps, &video).unwrap();
    assert_eq!(out.features.shape(), &[1, 16]);
}

#[test]
fn expert_is_deterministic_and_per_clip() {
    let expert = ExpertModel::new("expert", cfg(1, 1));
    let mut ps = ParamStore::new(123);
    expert.init(&mut ps);
    let clip = random_video(21, 1).pop().unwrap();
    let clips: Vec<&RawClip> = std::iter::repeat(&clip).take(4).collect();
    let out = expert.encode(&ps, &clips).unwrap();
    assert_eq!(out.features.shape(), &[4, 16]);
    let c = 16;
    let first = out.features.data()[0..c].to_vec();
    for t in 1..4 {
        assert_eq!(out.features.data()[t * c..(t + 1) * c], first[..]);
    }

    let single = expert.encode(&ps, &clips[..1]).unwrap();
    assert_eq!(single.features.shape(), &[1, 16]);
    assert_eq!(single.features.data(), &first[..]);
}

#[test]
fn text_encoder_contracts() {
    let text = TextModel::new("text", 10, 16, 2, 6);
    let mut ps = ParamStore::new(77);
    text.init(&mut ps);

    let a = text.encode(&ps, &[1, 4, 2]).unwrap();
    let b = text.encode(&ps, &[1, 4, 2]).unwrap();
    assert_eq!(a.cls, b.cls);
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.tokens.shape(), &[3, 16]);

    let single = text.encode(&ps, &[9]).unwrap();
    assert_eq!(single.tokens.shape(), &[1, 16]);

    // positional encoding makes token order matter
    let swapped = text.encode(&ps, &[4, 1, 2]).unwrap();
    assert_ne!(a.cls, swapped.cls);

    // out-of-vocabulary ids are rejected
    assert!(text.encode(&ps, &[10]).is_err());
    assert!(text.encode(&ps, &[]).is_err());
}
