//! Semantic operators in image-embedding space.
//!
//! A diffusion prior is fine-tuned per operator to map condition embeddings
//! to a target embedding. Trained operators are chained into generative
//! trees whose final embedding is handed to a pluggable image renderer.
//!
//! The crate is organized around the lifecycle of an operator:
//!
//! - [`embedding`]: the embedding value type, vector arithmetic, the
//!   latent-averaging baseline, and a bit-exact on-disk format.
//! - [`schedule`]: DDPM forward noising, the strided x0-prediction
//!   ancestral sampler, and classifier-free guidance.
//! - [`prior`]: the denoiser transformer over the 79-token sequence,
//!   with hand-written backprop for training.
//! - [`ops`]: declarative operator specs (slot maps, losses, condition
//!   dropping).
//! - [`trainer`]: the fine-tuning loop, AdamW, checkpointing.
//! - [`datagen`]: paired-dataset builders behind pluggable clients plus
//!   synthetic toy datasets with known oracle operators.
//! - [`tree`]: the generative-tree DSL (parser, serializer, evaluator).
//! - [`metrics`]: the similarity-based evaluation harness.
//! - [`clients`]: encoder/renderer client abstractions and deterministic
//!   mocks.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod clients;
pub mod datagen;
pub mod embedding;
pub mod metrics;
pub mod ops;
pub mod prior;
pub mod schedule;
pub mod trainer;
pub mod tree;

pub mod cli;

mod error;

pub use embedding::{Embedding, EmbeddingBatch, SpaceTag};
pub use error::{Error, Result};
