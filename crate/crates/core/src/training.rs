//! Negative log-likelihood loss and the plain SGD loop.
//!
//! One update per (image, caption) pair, fixed learning rate, no momentum.
//! Every reference caption of an image is its own training pair.

use std::time::Instant;

use crate::data::{CaptionDataset, Vocabulary};
use crate::model::{
    backward_sequence, forward_sequence, forward_sequence_with_dropout, init_parameters,
    validate_framed, Dims, ForwardTrace, Gradients, Parameters, TokenId,
};
use crate::numerics::{self, Rng};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// A single training pair: image features and a framed caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub tokens: Vec<TokenId>,
}

/// One [`Example`] per caption, in file order.
pub fn examples_from_dataset(dataset: &CaptionDataset, vocab: &Vocabulary) -> Vec<Example> {
    dataset
        .records
        .iter()
        .flat_map(|r| {
            r.captions.iter().map(|c| Example {
                features: r.features.clone(),
                tokens: vocab.encode(&crate::data::tokenize(c)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    /// Global-norm clip applied to each example's gradient.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub shuffle: bool,
    /// Half-width of the uniform weight initialisation.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 10,
            dropout_rate: 0.0,
            grad_clip: None,
            seed: 0,
            shuffle: true,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if let Some(clip) = self.grad_clip {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gradient clip must be positive, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss per predicted word, one entry per epoch. Each example's loss
    /// is taken from the forward pass that produced its update.
    pub epoch_losses: Vec<f64>,
    pub params: Parameters,
    pub wall_seconds: f64,
}

/// `-Σ_t log p_t(S_t)` read off a forward trace.
pub fn caption_loss(trace: &ForwardTrace, tokens: &[TokenId]) -> Result<f64> {
    if trace.tokens != tokens || trace.distributions.len() + 1 != tokens.len() {
        return Err(Error::InconsistentTrace(
            "trace was computed for a different token sequence".into(),
        ));
    }
    Ok(-trace.log_prob())
}

pub fn apply_dropout(x: &[f64], rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let mask = numerics::dropout_mask(x.len(), rate, rng)?;
    Ok(x.iter().zip(&mask).map(|(a, b)| a * b).collect())
}

/// `w <- w - lr * g` for every weight, after an optional global-norm clip of
/// the gradient.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    lr: f64,
    clip: Option<f64>,
) -> Result<()> {
    if params.dims() != grads.dims() {
        return Err(Error::shape(
            "sgd_step",
            format!("{:?}", params.dims()),
            format!("{:?}", grads.dims()),
        ));
    }
    let mut factor = lr;
    if let Some(max_norm) = clip {
        let norm = grads.global_norm();
        if norm > max_norm {
            factor *= max_norm / norm;
        }
    }
    for ((_, w), (_, g)) in params.matrices_mut().into_iter().zip(grads.matrices()) {
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= factor * gv;
        }
    }
    Ok(())
}

fn validate_examples(examples: &[Example], dims: Dims) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.features.len() != dims.feature_dim {
            return Err(Error::InvalidInput(format!(
                "example {i}: {} features, model expects {}",
                ex.features.len(),
                dims.feature_dim
            )));
        }
        validate_framed(&ex.tokens, dims.vocab_size)
            .map_err(|e| Error::InvalidInput(format!("example {i}: {e}")))?;
    }
    Ok(())
}

/// Initialise from `config.seed` and train.
pub fn train(examples: &[Example], dims: Dims, config: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(examples, dims, config, |_, _| {})
}

/// [`train`], calling `on_epoch(epoch, mean_loss)` after each epoch
/// (epochs counted from 1).
pub fn train_with_observer(
    examples: &[Example],
    dims: Dims,
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    dims.validate()?;
    let params = init_parameters(
        dims,
        config.init_scale,
        &mut Rng::derive(config.seed, INIT_STREAM),
    )?;
    train_from(params, examples, config, on_epoch)
}

/// Continue training existing parameters.
pub fn train_from(
    mut params: Parameters,
    examples: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    validate_examples(examples, params.dims())?;
    let started = Instant::now();
    let mut shuffle_rng = Rng::derive(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = Rng::derive(config.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut total_loss = 0.0;
        let mut total_words = 0usize;
        for &idx in &order {
            let ex = &examples[idx];
            let trace = if config.dropout_rate > 0.0 {
                forward_sequence_with_dropout(
                    &ex.features,
                    &ex.tokens,
                    &params,
                    config.dropout_rate,
                    &mut dropout_rng,
                )?
            } else {
                forward_sequence(&ex.features, &ex.tokens, &params)?
            };
            let loss = caption_loss(&trace, &ex.tokens)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total_loss += loss;
            total_words += trace.len();
            let grads = backward_sequence(&trace, &ex.tokens, &params)?;
            sgd_step(&mut params, &grads, config.learning_rate, config.grad_clip)?;
        }
        let mean = total_loss / total_words as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainReport {
        epoch_losses,
        params,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Total log-probability and predicted-word count of `examples`.
pub fn corpus_log_prob(params: &Parameters, examples: &[Example]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut words = 0;
    for ex in examples {
        let trace = forward_sequence(&ex.features, &ex.tokens, params)?;
        total += trace.log_prob();
        words += trace.len();
    }
    Ok((total, words))
}

pub fn mean_loss_per_word(params: &Parameters, examples: &[Example]) -> Result<f64> {
    let (total, words) = corpus_log_prob(params, examples)?;
    if words == 0 {
        return Err(Error::InvalidInput("no examples to evaluate".into()));
    }
    Ok(-total / words as f64)
}
