//! Neural image captioning with an LSTM language generator.
//!
//! An image feature vector is projected into the word-embedding space and fed
//! to the LSTM exactly once, before the start word. The network is then
//! unrolled over the caption and trained with plain SGD on the summed negative
//! log-likelihood of each next word. Captions are generated by sampling,
//! greedy decoding or beam search, and evaluated with corpus BLEU, perplexity
//! and retrieval metrics (recall@k, median rank).
//!
//! Module map:
//!
//! - [`numerics`]: dense kernels, softmax, the seeded RNG
//! - [`model`]: parameters, LSTM cell, forward/backward passes, checkpoints
//! - [`training`]: loss, dropout, SGD loop
//! - [`inference`]: sampling, beam search, ensembles
//! - [`metrics`]: BLEU, perplexity, ranking, human-baseline BLEU
//! - [`data`]: tokenizer, vocabulary, dataset files, synthetic data
//! - [`embedding`]: nearest neighbours in the learned embedding space
//! - [`cli`]: the `nic` command-line front end

pub mod cli;
pub mod data;
pub mod embedding;
mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
