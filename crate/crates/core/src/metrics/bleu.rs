//! Corpus BLEU with clipped n-gram precision and the brevity penalty.
//!
//! `BLEU = BP · exp((1/N) Σ_n ln p_n)` where `p_n` is the corpus-level
//! clipped n-gram precision, `BP = min(1, exp(1 - r/c))`, `c` the total
//! candidate length and `r` the sum of each candidate's closest reference
//! length (shorter wins ties). Any zero precision gives a score of 0.
//!
//! Corpus BLEU pools counts before dividing; it is not the mean of
//! per-sentence scores.

use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Self {
        EvalPair {
            candidate,
            references,
        }
    }

    /// Whitespace-split convenience constructor.
    pub fn from_text(candidate: &str, references: &[&str]) -> Self {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        EvalPair {
            candidate: split(candidate),
            references: references.iter().map(|r| split(r)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to matches and totals for n >= 2. Sentence-level diagnostics
    /// only.
    AddOne,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus totals of reference-clipped n-gram matches and candidate n-grams.
pub fn modified_precision(pairs: &[EvalPair], n: usize) -> (u64, u64) {
    let mut matches = 0;
    let mut total = 0;
    for pair in pairs {
        let cand = ngram_counts(&pair.candidate, n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for reference in &pair.references {
            for (gram, count) in ngram_counts(reference, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        for (gram, count) in cand {
            total += count;
            matches += count.min(max_ref.get(gram).copied().unwrap_or(0));
        }
    }
    (matches, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// `(clipped matches, candidate n-grams)` for n = 1..=max_n.
    pub counts: Vec<(u64, u64)>,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub brevity_penalty: f64,
    pub score: f64,
}

fn closest_reference_len(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(candidate_len), len))
        .unwrap_or(0)
}

pub fn corpus_bleu(pairs: &[EvalPair], max_n: usize, smoothing: Smoothing) -> Result<BleuReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("BLEU over an empty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidInput("BLEU order must be at least 1".into()));
    }
    if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
        return Err(Error::InvalidInput(format!("pair {i} has no references")));
    }
    let counts: Vec<(u64, u64)> = (1..=max_n).map(|n| modified_precision(pairs, n)).collect();
    let candidate_len: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let reference_len: usize = pairs
        .iter()
        .map(|p| closest_reference_len(p.candidate.len(), &p.references))
        .sum();
    let brevity_penalty = if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };

    let mut log_sum = 0.0;
    let mut zero = candidate_len == 0;
    for (i, &(m, t)) in counts.iter().enumerate() {
        let (m, t) = match smoothing {
            Smoothing::AddOne if i > 0 => (m + 1, t + 1),
            _ => (m, t),
        };
        if m == 0 || t == 0 {
            zero = true;
            break;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let score = if zero {
        0.0
    } else {
        brevity_penalty * (log_sum / max_n as f64).exp()
    };
    Ok(BleuReport {
        counts,
        candidate_len,
        reference_len,
        brevity_penalty,
        score,
    })
}

/// Unsmoothed corpus BLEU-`max_n`.
pub fn bleu(pairs: &[EvalPair], max_n: usize) -> Result<f64> {
    corpus_bleu(pairs, max_n, Smoothing::None).map(|r| r.score)
}

/// Leave-one-out BLEU of human references: for each position `h` in 0..5,
/// reference `h` of every group is scored against the other four; the five
/// corpus scores are averaged.
pub fn human_baseline_bleu(groups: &[Vec<Vec<String>>], max_n: usize) -> Result<f64> {
    const GROUP: usize = 5;
    if groups.is_empty() {
        return Err(Error::InvalidInput("no reference groups".into()));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() != GROUP) {
        return Err(Error::InvalidInput(format!(
            "group {i} has {} references, expected {GROUP}",
            g.len()
        )));
    }
    let mut total = 0.0;
    for held_out in 0..GROUP {
        let pairs: Vec<EvalPair> = groups
            .iter()
            .map(|g| EvalPair {
                candidate: g[held_out].clone(),
                references: g
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != held_out)
                    .map(|(_, r)| r.clone())
                    .collect(),
            })
            .collect();
        total += bleu(&pairs, max_n)?;
    }
    Ok(total / GROUP as f64)
}
