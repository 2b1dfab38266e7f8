//! Span-based aspect-sentiment triplet extraction.
//!
//! Given a sentence such as `"The room was fine but the staff was rude ."`,
//! the pipeline extracts triples of (aspect span, opinion span, polarity):
//! `(room, fine, Positive)` and `(staff, rude, Negative)`. It runs in three
//! stages over a shared word encoder:
//!
//! 1. **Span stage** — enumerate candidate word spans, score each for
//!    validity, and optionally prune with a sequence tagger.
//! 2. **Pair stage** — project spans into aspect and opinion spaces and keep
//!    pairs whose similarity clears a threshold.
//! 3. **Triplet stage** — classify every surviving pair as one of
//!    {invalid, Positive, Negative, Neutral} with a small order-invariant
//!    transformer over the sentence's pair set.
//!
//! Training combines a focal classification loss, a dice span-selection
//! loss, a contrastive pair loss with hard negative mining, and (when
//! pruning is on) a CRF tagging loss. Everything is plain `f64` on the CPU
//! and deterministic for a fixed seed.

pub mod archive;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pairs;
pub mod pca;
pub mod pretrain;
pub mod spans;
pub mod synthetic;
pub mod tape;
pub mod train;
pub mod triplets;

pub use error::{Error, Result};
