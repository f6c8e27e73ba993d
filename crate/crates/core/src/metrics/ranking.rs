//! Retrieval metrics over a score matrix (higher score = better match).
//!
//! The rank of a ground-truth column is one plus the number of columns
//! scoring strictly higher, or equal with a lower column index. A row with
//! several ground-truth columns takes the best of their ranks.

use serde::{Deserialize, Serialize};

use crate::inference::Ensemble;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    scores: Vec<Vec<f64>>,
    truth: Vec<Vec<usize>>,
}

impl ScoreMatrix {
    /// One ground-truth column per row.
    pub fn new(scores: Vec<Vec<f64>>, truth: Vec<usize>) -> Result<Self> {
        ScoreMatrix::with_truth_sets(scores, truth.into_iter().map(|t| vec![t]).collect())
    }

    pub fn with_truth_sets(scores: Vec<Vec<f64>>, truth: Vec<Vec<usize>>) -> Result<Self> {
        let cols = scores.first().map_or(0, Vec::len);
        if scores.is_empty() || cols == 0 {
            return Err(Error::InvalidInput("score matrix must be non-empty".into()));
        }
        if let Some(row) = scores.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("ScoreMatrix", cols, row.len()));
        }
        if scores.iter().flatten().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("score matrix contains NaN".into()));
        }
        if truth.len() != scores.len() {
            return Err(Error::shape("ScoreMatrix truth", scores.len(), truth.len()));
        }
        if let Some(t) = truth
            .iter()
            .find(|t| t.is_empty() || t.iter().any(|&c| c >= cols))
        {
            return Err(Error::InvalidInput(format!(
                "ground truth {t:?} out of range for {cols} columns"
            )));
        }
        Ok(ScoreMatrix { scores, truth })
    }

    pub fn rows(&self) -> usize {
        self.scores.len()
    }

    pub fn cols(&self) -> usize {
        self.scores[0].len()
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn truth(&self) -> &[Vec<usize>] {
        &self.truth
    }

    /// One-based rank of each row's best ground-truth column.
    pub fn ranks(&self) -> Vec<usize> {
        self.scores
            .iter()
            .zip(&self.truth)
            .map(|(row, truth)| {
                truth
                    .iter()
                    .map(|&gt| {
                        let target = row[gt];
                        1 + row
                            .iter()
                            .enumerate()
                            .filter(|&(j, &s)| s > target || (s == target && j < gt))
                            .count()
                    })
                    .min()
                    .expect("truth sets are non-empty")
            })
            .collect()
    }
}

/// Fraction of rows whose ground truth ranks within the top `k`.
pub fn recall_at_k(scores: &ScoreMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > scores.cols() {
        return Err(Error::InvalidInput(format!(
            "k = {k} out of range 1..={}",
            scores.cols()
        )));
    }
    let hits = scores.ranks().into_iter().filter(|&r| r <= k).count();
    Ok(hits as f64 / scores.rows() as f64)
}

/// Median ground-truth rank; the lower middle value for even row counts.
pub fn median_rank(scores: &ScoreMatrix) -> Result<f64> {
    let mut ranks = scores.ranks();
    ranks.sort_unstable();
    Ok(ranks[(ranks.len() - 1) / 2] as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreNorm {
    /// Summed log-probability of the caption.
    Raw,
    /// Log-probability divided by the number of predicted words.
    PerWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Query: image; candidates: captions.
    Annotation,
    /// Query: caption; candidates: images.
    Search,
}

/// Score every (image, caption) combination by the model's log-probability
/// of the caption given the image.
///
/// `images[i]` are feature vectors; `captions[j]` are framed token sequences
/// whose owning image is `owners[j]`.
pub fn retrieval_scores(
    ensemble: &Ensemble<'_>,
    images: &[Vec<f64>],
    captions: &[Vec<usize>],
    owners: &[usize],
    direction: Direction,
    norm: ScoreNorm,
) -> Result<ScoreMatrix> {
    if captions.len() != owners.len() {
        return Err(Error::shape(
            "retrieval_scores owners",
            captions.len(),
            owners.len(),
        ));
    }
    let mut table = vec![vec![0.0; captions.len()]; images.len()];
    for (i, features) in images.iter().enumerate() {
        for (j, tokens) in captions.iter().enumerate() {
            let lp = ensemble.score(features, tokens)?;
            table[i][j] = match norm {
                ScoreNorm::Raw => lp,
                ScoreNorm::PerWord => lp / (tokens.len() - 1) as f64,
            };
        }
    }
    match direction {
        Direction::Annotation => {
            let truth = (0..images.len())
                .map(|i| {
                    owners
                        .iter()
                        .enumerate()
                        .filter(|&(_, &o)| o == i)
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect();
            ScoreMatrix::with_truth_sets(table, truth)
        }
        Direction::Search => {
            let transposed = (0..captions.len())
                .map(|j| table.iter().map(|row| row[j]).collect())
                .collect();
            ScoreMatrix::new(transposed, owners.to_vec())
        }
    }
}
