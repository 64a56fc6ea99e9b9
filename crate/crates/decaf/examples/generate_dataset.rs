//! Generate a small synthetic benchmark and peek at one sample.
//!
//! ```bash
//! cargo run --release -p decaf --example generate_dataset
//! ```

use decaf::config::RunConfig;
use decaf::pipeline;
use decaf::synthdata::{self, Split};

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::test_profile();
    let out = std::path::Path::new("out/examples/generate_dataset");
    let manifest = pipeline::cmd_gen_data(&cfg, out)?;
    println!(
        "generated {} train / {} val queries under {}",
        manifest.params.n_train,
        manifest.params.n_val,
        manifest.dir.display()
    );

    let data = synthdata::load_split(&manifest, Split::Train)?;
    let sample = &data.samples[0];
    let video = &data.videos[sample.video_index];
    println!(
        "sample {}: {} clips, query tokens {:?}, ground truth span ({}, {})",
        sample.id,
        video.len(),
        sample.tokens,
        sample.span.0,
        sample.span.1
    );

    // mean pixel per clip makes the planted span visible to the eye
    let cin = manifest.params.clip.channels;
    print!("clip brightness: ");
    for clip in video {
        let mean: f64 = clip.tensor().data().iter().sum::<f64>() / clip.tensor().numel() as f64;
        print!("{}", if mean > 0.6 { '#' } else { '.' });
    }
    println!("   (# = bright, planted spans use bright prototypes; {cin} channels)");
    print!("ground truth:    ");
    for t in 0..video.len() {
        let inside = (t as f64) < sample.span.1 && (t as f64 + 1.0) > sample.span.0;
        print!("{}", if inside { '^' } else { ' ' });
    }
    println!();
    Ok(())
}
