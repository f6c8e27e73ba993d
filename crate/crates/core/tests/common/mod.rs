//! Reference implementations used as test oracles. These deliberately avoid
//! the library's numerics and recompute everything element by element.

#![allow(dead_code)]

use nic::data::{START, STOP};
use nic::model::{Dims, Parameters, TokenId, PARAMETER_NAMES};
use nic::numerics::{Matrix, Rng};

pub fn dims(feature_dim: usize, embed_dim: usize, hidden_dim: usize, vocab_size: usize) -> Dims {
    Dims {
        feature_dim,
        embed_dim,
        hidden_dim,
        vocab_size,
    }
}

fn mul(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cell(p: &Parameters, x: &[f64], c: &[f64], m: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let i = add(&mul(&p.w_ix, x), &mul(&p.w_im, m));
    let f = add(&mul(&p.w_fx, x), &mul(&p.w_fm, m));
    let o = add(&mul(&p.w_ox, x), &mul(&p.w_om, m));
    let g = add(&mul(&p.w_cx, x), &mul(&p.w_cm, m));
    let mut c_new = vec![0.0; c.len()];
    let mut m_new = vec![0.0; c.len()];
    for k in 0..c.len() {
        c_new[k] = sig(f[k]) * c[k] + sig(i[k]) * g[k].tanh();
        m_new[k] = sig(o[k]) * c_new[k];
    }
    (c_new, m_new)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Probability the model assigns to each of `tokens[1..]` given the image
/// and the preceding tokens.
pub fn target_probabilities(p: &Parameters, features: &[f64], tokens: &[TokenId]) -> Vec<f64> {
    let h = p.dims().hidden_dim;
    let (mut c, mut m) = cell(p, &mul(&p.w_enc, features), &vec![0.0; h], &vec![0.0; h]);
    let mut probs = Vec::new();
    for t in 0..tokens.len() - 1 {
        let x = p.w_e.column(tokens[t]);
        (c, m) = cell(p, &x, &c, &m);
        probs.push(softmax(&mul(&p.w_d, &m))[tokens[t + 1]]);
    }
    probs
}

/// `Σ log p` over `tokens[1..]`.
pub fn log_prob(p: &Parameters, features: &[f64], tokens: &[TokenId]) -> f64 {
    target_probabilities(p, features, tokens)
        .iter()
        .map(|q| q.ln())
        .sum()
}

/// Central-difference gradient of `-log_prob`, one vector per parameter
/// matrix in canonical order.
pub fn numeric_gradients(
    p: &Parameters,
    features: &[f64],
    tokens: &[TokenId],
    eps: f64,
) -> Vec<Vec<f64>> {
    PARAMETER_NAMES
        .iter()
        .map(|name| {
            let len = p.matrix(name).unwrap().data().len();
            (0..len)
                .map(|idx| {
                    let mut plus = p.clone();
                    plus.matrix_mut(name).unwrap().data_mut()[idx] += eps;
                    let mut minus = p.clone();
                    minus.matrix_mut(name).unwrap().data_mut()[idx] -= eps;
                    (log_prob(&minus, features, tokens) - log_prob(&plus, features, tokens))
                        / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|)`; entries where both are exactly zero
/// count as zero error.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs());
            if denom == 0.0 {
                0.0
            } else {
                (a - n).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// Every caption the decoder can produce within `max_len` generated tokens:
/// sequences ending in STOP, plus STOP-free sequences of exactly `max_len`
/// tokens (truncated). All start with START.
pub fn all_captions(vocab_size: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut frontier = vec![vec![START]];
    for step in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for w in 0..vocab_size {
                let mut seq = prefix.clone();
                seq.push(w);
                if w == STOP || step == max_len {
                    out.push(seq);
                } else {
                    next.push(seq);
                }
            }
        }
        frontier = next;
    }
    out
}

pub fn random_features(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// START, `words` tokens drawn from the non-reserved ids, STOP.
pub fn random_sentence(rng: &mut Rng, words: usize, vocab_size: usize) -> Vec<TokenId> {
    let mut tokens = vec![START];
    tokens.extend((0..words).map(|_| 3 + rng.below(vocab_size - 3)));
    tokens.push(STOP);
    tokens
}
