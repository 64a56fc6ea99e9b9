//! Delegate-and-conquer temporal grounding for long videos.
//!
//! A long video is split into `T` fixed-duration clips. A cheap *sidekick*
//! encoder produces dense per-clip features for every clip, a text encoder
//! embeds the query, and their inner products form a saliency map. Only the
//! top-c% salient clips are handed to the full-resolution *expert* encoder.
//! A multi-scale grounding head fuses both feature streams and predicts the
//! `(t_start, t_end)` span answering the query.
//!
//! Everything runs on a deliberately small dense-tensor substrate with
//! reverse-mode differentiation, so every trainable component is verifiable
//! against central finite differences, and all benchmarks use deterministic
//! synthetic videos with planted ground-truth moments.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release -p decaf --example end_to_end
//! cargo run --release -p decaf --example flops_report
//! cargo run --release -p decaf --example grad_check
//! ```
//!
//! or with the `decaf` binary, which exposes the same pipeline as batch
//! subcommands (`gen-data`, `train-sidekick`, `select`, `extract`,
//! `train-grounder`, `infer`, `eval`, `flops-report`, `ablate`).

pub mod config;
pub mod encoders;
pub mod error;
pub mod evalbench;
pub mod grounder;
pub mod numerics;
pub mod pipeline;
pub mod saliency;
pub mod synthdata;

pub use error::{Error, Result};
