//! Caption generation: sampling, greedy decoding and beam search, over a
//! single model or an ensemble whose per-step distributions are averaged.
//!
//! `max_len` bounds the number of generated tokens after START, the STOP
//! token included. A hypothesis that reaches the bound without STOP is
//! returned as-is (truncated, `finished == false`).

use std::cmp::Ordering;

use crate::data::{START, STOP};
use crate::model::{advance, initial_state, LstmState, Parameters, TokenId};
use crate::numerics::{sample_categorical_unchecked, Rng};
use crate::{Error, Result};

pub const DEFAULT_BEAM_WIDTH: usize = 20;
pub const DEFAULT_MAX_LEN: usize = 30;

/// Arithmetic mean of same-length distributions.
pub fn ensemble_distribution(dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidInput("no distributions to combine".into()))?;
    if let Some(bad) = dists.iter().find(|d| d.len() != first.len()) {
        return Err(Error::shape(
            "ensemble_distribution",
            first.len(),
            bad.len(),
        ));
    }
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let scale = 1.0 / dists.len() as f64;
    Ok((0..first.len())
        .map(|i| dists.iter().map(|d| d[i]).sum::<f64>() * scale)
        .collect())
}

/// One or more models sharing a vocabulary and feature space.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    models: Vec<&'a Parameters>,
}

impl<'a> Ensemble<'a> {
    pub fn new(models: Vec<&'a Parameters>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidInput("an ensemble needs at least one model".into()))?
            .dims();
        for m in &models[1..] {
            let d = m.dims();
            if d.vocab_size != first.vocab_size || d.feature_dim != first.feature_dim {
                return Err(Error::shape(
                    "Ensemble::new",
                    format!(
                        "vocab {} / features {}",
                        first.vocab_size, first.feature_dim
                    ),
                    format!("vocab {} / features {}", d.vocab_size, d.feature_dim),
                ));
            }
        }
        Ok(Ensemble { models })
    }

    pub fn single(model: &'a Parameters) -> Self {
        Ensemble {
            models: vec![model],
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.models[0].dims().vocab_size
    }

    /// Per-model states after the image step.
    pub fn start(&self, features: &[f64]) -> Result<Vec<LstmState>> {
        self.models
            .iter()
            .map(|m| initial_state(features, m))
            .collect()
    }

    /// Feed `token` to every model; returns the new states and the averaged
    /// next-word distribution.
    pub fn step(&self, token: TokenId, states: &[LstmState]) -> Result<(Vec<LstmState>, Vec<f64>)> {
        let mut next = Vec::with_capacity(self.models.len());
        let mut dists = Vec::with_capacity(self.models.len());
        for (m, s) in self.models.iter().zip(states) {
            let (state, dist) = advance(token, s, m)?;
            next.push(state);
            dists.push(dist);
        }
        Ok((next, ensemble_distribution(&dists)?))
    }

    /// Summed log-probability of the tokens after START; STOP not required.
    pub fn score(&self, features: &[f64], tokens: &[TokenId]) -> Result<f64> {
        if tokens.first() != Some(&START) {
            return Err(Error::MalformedSequence(
                "sequence does not begin with START".into(),
            ));
        }
        let mut states = self.start(features)?;
        let mut total = 0.0;
        for pair in tokens.windows(2) {
            let (next, dist) = self.step(pair[0], &states)?;
            let p = dist
                .get(pair[1])
                .ok_or_else(|| Error::InvalidToken(format!("token id {} out of range", pair[1])))?;
            total += p.ln();
            states = next;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Starts with START; ends with STOP when `finished`.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// Decoder state per ensemble member after the last consumed token.
    pub states: Vec<LstmState>,
    /// STOP was emitted.
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Beam,
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub mode: DecodeMode,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: DEFAULT_BEAM_WIDTH,
            max_len: DEFAULT_MAX_LEN,
            mode: DecodeMode::Beam,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam width must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ranking order: higher log-probability first, then lexicographic tokens.
pub fn hypothesis_order(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Candidate {
    log_prob: f64,
    parent: usize,
    token: TokenId,
}

/// Beam search keeping `beam_width` live hypotheses per step.
///
/// All continuations of all live hypotheses are ranked together. A STOP
/// continuation ranked within the top `beam_width` moves to the completed
/// pool; the best non-STOP continuations refill the live beam. The result
/// is the top `beam_width` of the pool (plus any hypotheses truncated at
/// `max_len`), best first.
pub fn beam_search(
    features: &[f64],
    ensemble: &Ensemble<'_>,
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    DecodeConfig {
        beam_width,
        max_len,
        ..DecodeConfig::default()
    }
    .validate()?;
    let vocab = ensemble.vocab_size();
    let mut live = vec![BeamHypothesis {
        tokens: vec![START],
        log_prob: 0.0,
        states: ensemble.start(features)?,
        finished: false,
    }];
    let mut pool: Vec<BeamHypothesis> = Vec::new();

    for depth in 1..=max_len {
        let mut next_states = Vec::with_capacity(live.len());
        let mut candidates = Vec::with_capacity(live.len() * vocab);
        for (parent, hyp) in live.iter().enumerate() {
            let last = *hyp.tokens.last().expect("hypotheses are never empty");
            let (states, dist) = ensemble.step(last, &hyp.states)?;
            for (token, p) in dist.iter().enumerate() {
                candidates.push(Candidate {
                    log_prob: hyp.log_prob + p.ln(),
                    parent,
                    token,
                });
            }
            next_states.push(states);
        }
        candidates.sort_by(|a, b| {
            b.log_prob.total_cmp(&a.log_prob).then_with(|| {
                live[a.parent]
                    .tokens
                    .cmp(&live[b.parent].tokens)
                    .then(a.token.cmp(&b.token))
            })
        });

        let mut next_live = Vec::with_capacity(beam_width);
        for (rank, cand) in candidates.iter().enumerate() {
            if next_live.len() >= beam_width && rank >= beam_width {
                break;
            }
            let parent = &live[cand.parent];
            let extend = || {
                let mut tokens = parent.tokens.clone();
                tokens.push(cand.token);
                tokens
            };
            if cand.token == STOP {
                if rank < beam_width {
                    pool.push(BeamHypothesis {
                        tokens: extend(),
                        log_prob: cand.log_prob,
                        states: parent.states.clone(),
                        finished: true,
                    });
                }
            } else if next_live.len() < beam_width {
                next_live.push(BeamHypothesis {
                    tokens: extend(),
                    log_prob: cand.log_prob,
                    states: next_states[cand.parent].clone(),
                    finished: false,
                });
            }
        }
        live = next_live;

        if depth == max_len || live.is_empty() {
            break;
        }
        // Scores never increase along an extension, so once the pool holds
        // `beam_width` entries all strictly better than every live beam the
        // result is settled.
        if pool.len() >= beam_width {
            sort_hypotheses(&mut pool);
            if pool[beam_width - 1].log_prob > live[0].log_prob {
                live.clear();
                break;
            }
        }
    }
    pool.extend(live);
    sort_hypotheses(&mut pool);
    pool.truncate(beam_width);
    Ok(pool)
}

fn sort_hypotheses(hyps: &mut [BeamHypothesis]) {
    hyps.sort_by(|a, b| hypothesis_order((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)));
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode(
    features: &[f64],
    ensemble: &Ensemble<'_>,
    max_len: usize,
) -> Result<BeamHypothesis> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let mut hyp = BeamHypothesis {
        tokens: vec![START],
        log_prob: 0.0,
        states: ensemble.start(features)?,
        finished: false,
    };
    for _ in 0..max_len {
        let last = *hyp.tokens.last().expect("hypotheses are never empty");
        let (states, dist) = ensemble.step(last, &hyp.states)?;
        let (token, p) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            });
        hyp.tokens.push(token);
        hyp.log_prob += p.ln();
        if token == STOP {
            hyp.finished = true;
            break;
        }
        hyp.states = states;
    }
    Ok(hyp)
}

/// Draw each word from the model distribution until STOP or `max_len`.
pub fn sample_caption(
    features: &[f64],
    ensemble: &Ensemble<'_>,
    max_len: usize,
    rng: &mut Rng,
) -> Result<BeamHypothesis> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let mut hyp = BeamHypothesis {
        tokens: vec![START],
        log_prob: 0.0,
        states: ensemble.start(features)?,
        finished: false,
    };
    for _ in 0..max_len {
        let last = *hyp.tokens.last().expect("hypotheses are never empty");
        let (states, dist) = ensemble.step(last, &hyp.states)?;
        let token = sample_categorical_unchecked(&dist, rng);
        hyp.tokens.push(token);
        hyp.log_prob += dist[token].ln();
        if token == STOP {
            hyp.finished = true;
            break;
        }
        hyp.states = states;
    }
    Ok(hyp)
}

/// Decode per `config`. Beam mode returns up to `beam_width` hypotheses;
/// greedy and sample modes return one.
pub fn decode(
    features: &[f64],
    ensemble: &Ensemble<'_>,
    config: &DecodeConfig,
    rng: &mut Rng,
) -> Result<Vec<BeamHypothesis>> {
    config.validate()?;
    match config.mode {
        DecodeMode::Beam => beam_search(features, ensemble, config.beam_width, config.max_len),
        DecodeMode::Greedy => Ok(vec![greedy_decode(features, ensemble, config.max_len)?]),
        DecodeMode::Sample => Ok(vec![sample_caption(
            features,
            ensemble,
            config.max_len,
            rng,
        )?]),
    }
}
