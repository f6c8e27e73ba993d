//! Nearest neighbours in the learned word-embedding space, by cosine
//! similarity between columns of `W_e`.

use std::fmt;

use crate::data::{Vocabulary, RESERVED};
use crate::model::{Parameters, TokenId};
use crate::numerics::{dot, norm};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborReport {
    pub query: String,
    /// Highest similarity first; ties by ascending token id.
    pub neighbors: Vec<(String, f64)>,
}

impl fmt::Display for NeighborReport {
    /// `token<TAB>similarity` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (token, sim) in &self.neighbors {
            writeln!(f, "{token}\t{sim:.6}")?;
        }
        Ok(())
    }
}

fn embedding_of(params: &Parameters, vocab: &Vocabulary, id: TokenId) -> Result<(Vec<f64>, f64)> {
    let column = params.w_e.column(id);
    let n = norm(&column);
    if n == 0.0 {
        let token = vocab.token(id).unwrap_or("?").to_string();
        return Err(Error::DegenerateEmbedding(token));
    }
    Ok((column, n))
}

/// Cosine similarity between the embeddings of two token ids.
pub fn cosine_similarity(
    params: &Parameters,
    vocab: &Vocabulary,
    a: TokenId,
    b: TokenId,
) -> Result<f64> {
    let (ea, na) = embedding_of(params, vocab, a)?;
    let (eb, nb) = embedding_of(params, vocab, b)?;
    Ok(dot(&ea, &eb) / (na * nb))
}

pub fn nearest_neighbors(
    word: &str,
    k: usize,
    params: &Parameters,
    vocab: &Vocabulary,
) -> Result<NeighborReport> {
    let query = vocab
        .id(word)
        .ok_or_else(|| Error::InvalidToken(format!("'{word}' is not in the vocabulary")))?;
    if params.dims().vocab_size != vocab.len() {
        return Err(Error::shape(
            "nearest_neighbors",
            vocab.len(),
            params.dims().vocab_size,
        ));
    }
    if k == 0 || k >= vocab.len() {
        return Err(Error::InvalidInput(format!(
            "k must be in 1..{}, got {k}",
            vocab.len()
        )));
    }
    let (q, qn) = embedding_of(params, vocab, query)?;
    let mut scored = Vec::with_capacity(vocab.len());
    for id in RESERVED.len()..vocab.len() {
        if id == query {
            continue;
        }
        let (e, en) = embedding_of(params, vocab, id)?;
        scored.push((id, dot(&q, &e) / (qn * en)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(NeighborReport {
        query: word.to_string(),
        neighbors: scored
            .into_iter()
            .map(|(id, sim)| (vocab.token(id).expect("id in range").to_string(), sim))
            .collect(),
    })
}
