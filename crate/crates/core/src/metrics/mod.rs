//! Automatic caption metrics.

mod bleu;
mod ranking;

pub use bleu::{
    bleu, corpus_bleu, human_baseline_bleu, modified_precision, BleuReport, EvalPair, Smoothing,
};
pub use ranking::{median_rank, recall_at_k, retrieval_scores, Direction, ScoreMatrix, ScoreNorm};

use crate::{Error, Result};

/// `exp(-total_log_prob / word_count)`: the geometric mean of the inverse
/// per-word probabilities.
pub fn perplexity(total_log_prob: f64, word_count: usize) -> Result<f64> {
    if word_count == 0 {
        return Err(Error::InvalidInput("perplexity over zero words".into()));
    }
    if total_log_prob.is_nan() || total_log_prob > 0.0 {
        return Err(Error::InvalidInput(format!(
            "total log-probability must be <= 0, got {total_log_prob}"
        )));
    }
    Ok((-total_log_prob / word_count as f64).exp())
}
