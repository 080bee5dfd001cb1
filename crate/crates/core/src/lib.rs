//! Code-switching language modeling on monolingual data.
//!
//! A single-layer LSTM language model whose output projection is partitioned
//! by language; symmetric-KL or cosine-distance penalties pull the two
//! blocks' distributions together, and an optional post-step projection
//! keeps every output embedding at unit norm. Evaluation covers five
//! perplexity variants, unsupervised bilingual word translation, PCA
//! overlap, and prefix-conditioned generation.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod regularizers;
pub mod training;

pub use error::{Error, Result};
