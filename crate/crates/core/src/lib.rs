//! Gaussian sentence embeddings with an asymmetric KL-based similarity.
//!
//! Sentences are encoded as diagonal Gaussians ([`gaussian`]), produced by a
//! pluggable base encoder and two linear heads ([`encoder`]). The
//! [`trainer`] fits them contrastively on NLI triplets, and the [`nli`] and
//! [`direction`] modules evaluate two-way entailment classification and
//! entailment-direction prediction.
//!
//! With the default `parallel` feature, per-sentence and per-example loops
//! run on rayon; results are collected in order, so they do not depend on
//! the thread count.

pub mod data;
pub mod direction;
pub mod encoder;
pub mod error;
pub mod formats;
pub mod gaussian;
pub mod nli;
pub mod optim;
pub mod par;
pub mod trainer;

pub use data::{
    build_triplets, combine, generate_synthetic, load_jsonl, Label, NliExample, SynthConfig, Triplet,
};
pub use direction::{
    direction_accuracy, length_baseline, length_ratio_histogram, predict_direction, Direction,
};
pub use encoder::{tokenize, BagEncoder, BaseEncoder, Model, PrecomputedVectors, ProjectionHeads};
pub use error::{Error, Result};
pub use gaussian::{kl_divergence, kl_gradients, similarity, GaussianEmbedding};
pub use nli::{auprc, best_threshold, classify, evaluate, mcnemar, score_examples, EvalReport};
pub use trainer::{batch_loss, grid_search, loss_gradients, train, LossBreakdown, LossVariant, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Init = 1,
    Shuffle = 2,
    Synthetic = 3,
}

/// ChaCha8 generator for `stream` of `seed`.
pub fn seeded_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
