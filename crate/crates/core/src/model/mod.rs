//! The caption network: encoder projection, word embedding, LSTM cell and
//! vocabulary softmax, with the unrolled forward pass and its analytic
//! backward pass.
//!
//! Unrolling for an image `I` and framed caption `S_0 .. S_N`:
//!
//! ```text
//! state_-1 = (c = 0, m = 0)
//! x_-1 = W_enc · features           (image, consumed once)
//! x_t  = W_e[:, S_t]                t = 0 .. N-1
//! p_t+1 = softmax(W_d · m_t)        scored against S_t+1
//! ```
//!
//! The cell has no bias terms:
//!
//! ```text
//! i = σ(W_ix x + W_im m')      f = σ(W_fx x + W_fm m')
//! o = σ(W_ox x + W_om m')      g = tanh(W_cx x + W_cm m')
//! c = f ⊙ c' + i ⊙ g           m = o ⊙ c
//! ```

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::data::{START, STOP};
use crate::numerics::{self, sigmoid, Matrix, Rng};
use crate::{Error, Result};

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let Dims {
            feature_dim,
            embed_dim,
            hidden_dim,
            vocab_size,
        } = *self;
        if feature_dim == 0 || embed_dim == 0 || hidden_dim == 0 || vocab_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "all dims must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Names of the eleven weight matrices, in storage order.
pub const PARAMETER_NAMES: [&str; 11] = [
    "w_ix", "w_im", "w_fx", "w_fm", "w_ox", "w_om", "w_cx", "w_cm", "w_e", "w_enc", "w_d",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    dims: Dims,
    pub w_ix: Matrix,
    pub w_im: Matrix,
    pub w_fx: Matrix,
    pub w_fm: Matrix,
    pub w_ox: Matrix,
    pub w_om: Matrix,
    pub w_cx: Matrix,
    pub w_cm: Matrix,
    /// Embedding, `embed_dim × vocab_size`; column `t` embeds token `t`.
    pub w_e: Matrix,
    /// Image encoder projection, `embed_dim × feature_dim`.
    pub w_enc: Matrix,
    /// Output projection to vocabulary logits, `vocab_size × hidden_dim`.
    pub w_d: Matrix,
}

impl Parameters {
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        let Dims {
            feature_dim: f,
            embed_dim: e,
            hidden_dim: h,
            vocab_size: v,
        } = dims;
        let x_side = || Matrix::zeros(h, e);
        let m_side = || Matrix::zeros(h, h);
        Ok(Parameters {
            dims,
            w_ix: x_side(),
            w_im: m_side(),
            w_fx: x_side(),
            w_fm: m_side(),
            w_ox: x_side(),
            w_om: m_side(),
            w_cx: x_side(),
            w_cm: m_side(),
            w_e: Matrix::zeros(e, v),
            w_enc: Matrix::zeros(e, f),
            w_d: Matrix::zeros(v, h),
        })
    }

    /// Assemble from named matrices, checking every shape against `dims`.
    pub fn from_matrices(dims: Dims, matrices: Vec<(String, Matrix)>) -> Result<Self> {
        let mut params = Parameters::zeros(dims)?;
        if matrices.len() != PARAMETER_NAMES.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} matrices, got {}",
                PARAMETER_NAMES.len(),
                matrices.len()
            )));
        }
        for (name, matrix) in matrices {
            let slot = params
                .matrices_mut()
                .into_iter()
                .find(|(n, _)| *n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))?;
            if slot.shape() != matrix.shape() {
                return Err(Error::shape(
                    "Parameters::from_matrices",
                    format!("{name} {:?}", slot.shape()),
                    format!("{:?}", matrix.shape()),
                ));
            }
            *slot = matrix;
        }
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 11] {
        [
            ("w_ix", &self.w_ix),
            ("w_im", &self.w_im),
            ("w_fx", &self.w_fx),
            ("w_fm", &self.w_fm),
            ("w_ox", &self.w_ox),
            ("w_om", &self.w_om),
            ("w_cx", &self.w_cx),
            ("w_cm", &self.w_cm),
            ("w_e", &self.w_e),
            ("w_enc", &self.w_enc),
            ("w_d", &self.w_d),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 11] {
        [
            ("w_ix", &mut self.w_ix),
            ("w_im", &mut self.w_im),
            ("w_fx", &mut self.w_fx),
            ("w_fm", &mut self.w_fm),
            ("w_ox", &mut self.w_ox),
            ("w_om", &mut self.w_om),
            ("w_cx", &mut self.w_cx),
            ("w_cm", &mut self.w_cm),
            ("w_e", &mut self.w_e),
            ("w_enc", &mut self.w_enc),
            ("w_d", &mut self.w_d),
        ]
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.matrices()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m)
    }

    pub fn matrix_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.matrices_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m)
    }

    pub fn num_weights(&self) -> usize {
        self.matrices().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|(_, m)| m.is_finite())
    }
}

/// Gradient of the caption loss, shape-congruent with [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Parameters);

impl Gradients {
    pub fn zeros(dims: Dims) -> Result<Self> {
        Parameters::zeros(dims).map(Gradients)
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "Gradients::add_assign",
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        for ((_, a), (_, b)) in self.0.matrices_mut().into_iter().zip(other.0.matrices()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, m) in self.0.matrices_mut() {
            for v in m.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .matrices()
            .iter()
            .flat_map(|(_, m)| m.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn into_inner(self) -> Parameters {
        self.0
    }
}

impl Deref for Gradients {
    type Target = Parameters;

    fn deref(&self) -> &Parameters {
        &self.0
    }
}

impl DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut Parameters {
        &mut self.0
    }
}

/// Draw every weight uniformly from `[-scale, scale]`, matrices in
/// [`PARAMETER_NAMES`] order, entries row-major.
pub fn init_parameters(dims: Dims, scale: f64, rng: &mut Rng) -> Result<Parameters> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "init scale must be >= 0, got {scale}"
        )));
    }
    let mut params = Parameters::zeros(dims)?;
    for (_, m) in params.matrices_mut() {
        for v in m.data_mut() {
            *v = rng.uniform(-scale, scale);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub m: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            c: vec![0.0; hidden_dim],
            m: vec![0.0; hidden_dim],
        }
    }
}

pub fn encode_image(features: &[f64], params: &Parameters) -> Result<Vec<f64>> {
    numerics::matvec(&params.w_enc, features)
        .map_err(|_| Error::shape("encode_image", params.dims.feature_dim, features.len()))
}

pub fn embed_word(token: TokenId, params: &Parameters) -> Result<Vec<f64>> {
    if token >= params.dims.vocab_size {
        return Err(Error::InvalidToken(format!(
            "token id {token} out of range for vocabulary of {}",
            params.dims.vocab_size
        )));
    }
    Ok(params.w_e.column(token))
}

/// Everything one cell application produced, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// LSTM input after any dropout mask.
    pub x: Vec<f64>,
    /// Inverted-dropout mask applied to the raw input, if any.
    pub mask: Option<Vec<f64>>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    /// tanh candidate feeding the cell update.
    pub candidate: Vec<f64>,
    pub prev: LstmState,
    pub state: LstmState,
}

fn cell(x: Vec<f64>, mask: Option<Vec<f64>>, prev: &LstmState, params: &Parameters) -> StepRecord {
    let h = params.dims.hidden_dim;
    let pre = |wx: &Matrix, wm: &Matrix| {
        let mut a = vec![0.0; h];
        wx.mul_vec_acc(&x, &mut a);
        wm.mul_vec_acc(&prev.m, &mut a);
        a
    };
    let input_gate: Vec<f64> = pre(&params.w_ix, &params.w_im)
        .into_iter()
        .map(sigmoid)
        .collect();
    let forget_gate: Vec<f64> = pre(&params.w_fx, &params.w_fm)
        .into_iter()
        .map(sigmoid)
        .collect();
    let output_gate: Vec<f64> = pre(&params.w_ox, &params.w_om)
        .into_iter()
        .map(sigmoid)
        .collect();
    let candidate: Vec<f64> = pre(&params.w_cx, &params.w_cm)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let c: Vec<f64> = (0..h)
        .map(|k| forget_gate[k] * prev.c[k] + input_gate[k] * candidate[k])
        .collect();
    let m: Vec<f64> = (0..h).map(|k| output_gate[k] * c[k]).collect();
    StepRecord {
        x,
        mask,
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        prev: prev.clone(),
        state: LstmState { c, m },
    }
}

fn check_state(context: &'static str, state: &LstmState, hidden_dim: usize) -> Result<()> {
    if state.c.len() != hidden_dim || state.m.len() != hidden_dim {
        return Err(Error::shape(
            context,
            hidden_dim,
            format!("c {} / m {}", state.c.len(), state.m.len()),
        ));
    }
    Ok(())
}

pub fn lstm_step(x: &[f64], prev: &LstmState, params: &Parameters) -> Result<LstmState> {
    if x.len() != params.dims.embed_dim {
        return Err(Error::shape(
            "lstm_step input",
            params.dims.embed_dim,
            x.len(),
        ));
    }
    check_state("lstm_step state", prev, params.dims.hidden_dim)?;
    Ok(cell(x.to_vec(), None, prev, params).state)
}

/// `softmax(W_d · m)`.
pub fn word_distribution(state: &LstmState, params: &Parameters) -> Result<Vec<f64>> {
    check_state("word_distribution", state, params.dims.hidden_dim)?;
    Ok(distribution_unchecked(&state.m, params))
}

fn distribution_unchecked(m: &[f64], params: &Parameters) -> Vec<f64> {
    let mut logits = vec![0.0; params.dims.vocab_size];
    params.w_d.mul_vec_acc(m, &mut logits);
    numerics::softmax_unchecked(&logits)
}

/// State after the image step, ready to consume the start word.
pub fn initial_state(features: &[f64], params: &Parameters) -> Result<LstmState> {
    let x = encode_image(features, params)?;
    Ok(cell(x, None, &LstmState::zeros(params.dims.hidden_dim), params).state)
}

/// Feed `token` and return the next state with the distribution over the
/// following word.
pub fn advance(
    token: TokenId,
    state: &LstmState,
    params: &Parameters,
) -> Result<(LstmState, Vec<f64>)> {
    let x = embed_word(token, params)?;
    check_state("advance", state, params.dims.hidden_dim)?;
    let next = cell(x, None, state, params).state;
    let dist = distribution_unchecked(&next.m, params);
    Ok((next, dist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub features: Vec<f64>,
    pub tokens: Vec<TokenId>,
    /// The t = -1 step; the only place the image enters.
    pub image_step: StepRecord,
    /// `word_steps[t]` consumed `tokens[t]`.
    pub word_steps: Vec<StepRecord>,
    /// `distributions[t]` is the prediction for `tokens[t + 1]`.
    pub distributions: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Number of predicted words N (including the stop word).
    pub fn len(&self) -> usize {
        self.distributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distributions.is_empty()
    }

    /// Per-step probability of the target word.
    pub fn target_probabilities(&self) -> Vec<f64> {
        self.distributions
            .iter()
            .zip(&self.tokens[1..])
            .map(|(p, &t)| p[t])
            .collect()
    }

    pub fn log_prob(&self) -> f64 {
        self.target_probabilities().iter().map(|p| p.ln()).sum()
    }
}

pub(crate) fn validate_framed(tokens: &[TokenId], vocab_size: usize) -> Result<()> {
    if tokens.len() < 2 {
        return Err(Error::MalformedSequence(format!(
            "need at least START and STOP, got {} tokens",
            tokens.len()
        )));
    }
    if tokens[0] != START {
        return Err(Error::MalformedSequence(
            "sequence does not begin with START".into(),
        ));
    }
    if tokens[tokens.len() - 1] != STOP {
        return Err(Error::MalformedSequence(
            "sequence does not end with STOP".into(),
        ));
    }
    validate_ids(tokens, vocab_size)
}

fn validate_ids(tokens: &[TokenId], vocab_size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab_size) {
        Some(t) => Err(Error::InvalidToken(format!(
            "token id {t} out of range for vocabulary of {vocab_size}"
        ))),
        None => Ok(()),
    }
}

pub fn forward_sequence(
    features: &[f64],
    tokens: &[TokenId],
    params: &Parameters,
) -> Result<ForwardTrace> {
    forward_impl(features, tokens, params, None)
}

/// Forward pass with inverted dropout on every LSTM input `x_t`.
pub fn forward_sequence_with_dropout(
    features: &[f64],
    tokens: &[TokenId],
    params: &Parameters,
    rate: f64,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    forward_impl(features, tokens, params, Some((rate, rng)))
}

fn forward_impl(
    features: &[f64],
    tokens: &[TokenId],
    params: &Parameters,
    mut dropout: Option<(f64, &mut Rng)>,
) -> Result<ForwardTrace> {
    validate_framed(tokens, params.dims.vocab_size)?;
    let embed_dim = params.dims.embed_dim;
    let mut masked = |raw: Vec<f64>| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => {
                let mask = numerics::dropout_mask(embed_dim, *rate, rng)?;
                let x = raw.iter().zip(&mask).map(|(a, b)| a * b).collect();
                Ok((x, Some(mask)))
            }
            Some((rate, _)) if !(0.0..1.0).contains(rate) => Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {rate}"
            ))),
            _ => Ok((raw, None)),
        }
    };

    let (x, mask) = masked(encode_image(features, params)?)?;
    let image_step = cell(x, mask, &LstmState::zeros(params.dims.hidden_dim), params);

    let n = tokens.len() - 1;
    let mut word_steps = Vec::with_capacity(n);
    let mut distributions = Vec::with_capacity(n);
    for &token in &tokens[..n] {
        let prev = word_steps
            .last()
            .map_or(&image_step.state, |s: &StepRecord| &s.state);
        let (x, mask) = masked(params.w_e.column(token))?;
        let step = cell(x, mask, prev, params);
        distributions.push(distribution_unchecked(&step.state.m, params));
        word_steps.push(step);
    }
    Ok(ForwardTrace {
        features: features.to_vec(),
        tokens: tokens.to_vec(),
        image_step,
        word_steps,
        distributions,
    })
}

/// `Σ_t log p_t(S_t)` over a START/STOP framed sequence.
pub fn sequence_log_prob(features: &[f64], tokens: &[TokenId], params: &Parameters) -> Result<f64> {
    Ok(forward_sequence(features, tokens, params)?.log_prob())
}

/// Log-probability of the words after START, without requiring a trailing
/// STOP. Scores decoder output that was truncated at the length bound.
pub fn prefix_log_prob(features: &[f64], tokens: &[TokenId], params: &Parameters) -> Result<f64> {
    if tokens.first() != Some(&START) {
        return Err(Error::MalformedSequence(
            "sequence does not begin with START".into(),
        ));
    }
    validate_ids(tokens, params.dims.vocab_size)?;
    let mut state = initial_state(features, params)?;
    let mut total = 0.0;
    for pair in tokens.windows(2) {
        let (next, dist) = advance(pair[0], &state, params)?;
        total += dist[pair[1]].ln();
        state = next;
    }
    Ok(total)
}

fn check_trace(trace: &ForwardTrace, tokens: &[TokenId], params: &Parameters) -> Result<()> {
    if trace.tokens != tokens {
        return Err(Error::InconsistentTrace(
            "trace was computed for a different token sequence".into(),
        ));
    }
    let dims = params.dims;
    let consistent = trace.word_steps.len() + 1 == tokens.len()
        && trace.distributions.len() == trace.word_steps.len()
        && trace.features.len() == dims.feature_dim
        && trace.image_step.x.len() == dims.embed_dim
        && trace.image_step.state.m.len() == dims.hidden_dim
        && trace
            .distributions
            .iter()
            .all(|p| p.len() == dims.vocab_size);
    if !consistent {
        return Err(Error::InconsistentTrace(format!(
            "trace shapes do not match parameters with dims {dims:?}"
        )));
    }
    Ok(())
}

/// Gradient of `-Σ_t log p_t(S_t)` with respect to every weight, by
/// backpropagation through the unrolled steps.
pub fn backward_sequence(
    trace: &ForwardTrace,
    tokens: &[TokenId],
    params: &Parameters,
) -> Result<Gradients> {
    check_trace(trace, tokens, params)?;
    let dims = params.dims;
    let h = dims.hidden_dim;
    let mut grads = Gradients::zeros(dims)?;

    // Gradients flowing backward into m_t and c_t from step t + 1.
    let mut dm_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dlogits = vec![0.0; dims.vocab_size];

    let n = trace.word_steps.len();
    for t in (0..=n).rev() {
        // t == 0 is the image step; word step t - 1 otherwise.
        let step = if t == 0 {
            &trace.image_step
        } else {
            &trace.word_steps[t - 1]
        };
        let mut dm = std::mem::take(&mut dm_next);
        if t > 0 {
            let p = &trace.distributions[t - 1];
            dlogits.copy_from_slice(p);
            dlogits[tokens[t]] -= 1.0;
            grads.w_d.add_outer(&dlogits, &step.state.m);
            params.w_d.mul_vec_transposed_acc(&dlogits, &mut dm);
        }

        let mut dc = std::mem::take(&mut dc_next);
        let mut da_i = vec![0.0; h];
        let mut da_f = vec![0.0; h];
        let mut da_o = vec![0.0; h];
        let mut da_g = vec![0.0; h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, g) = (
                step.input_gate[k],
                step.forget_gate[k],
                step.output_gate[k],
                step.candidate[k],
            );
            let c = step.state.c[k];
            dc[k] += dm[k] * o;
            da_o[k] = dm[k] * c * o * (1.0 - o);
            da_i[k] = dc[k] * g * i * (1.0 - i);
            da_f[k] = dc[k] * step.prev.c[k] * f * (1.0 - f);
            da_g[k] = dc[k] * i * (1.0 - g * g);
            dc_prev[k] = dc[k] * f;
        }

        let mut dx = vec![0.0; dims.embed_dim];
        let mut dm_prev = vec![0.0; h];
        let gates = [
            (&da_i, &params.w_ix, &params.w_im),
            (&da_f, &params.w_fx, &params.w_fm),
            (&da_o, &params.w_ox, &params.w_om),
            (&da_g, &params.w_cx, &params.w_cm),
        ];
        for (da, wx, wm) in gates {
            wx.mul_vec_transposed_acc(da, &mut dx);
            wm.mul_vec_transposed_acc(da, &mut dm_prev);
        }
        grads.w_ix.add_outer(&da_i, &step.x);
        grads.w_im.add_outer(&da_i, &step.prev.m);
        grads.w_fx.add_outer(&da_f, &step.x);
        grads.w_fm.add_outer(&da_f, &step.prev.m);
        grads.w_ox.add_outer(&da_o, &step.x);
        grads.w_om.add_outer(&da_o, &step.prev.m);
        grads.w_cx.add_outer(&da_g, &step.x);
        grads.w_cm.add_outer(&da_g, &step.prev.m);

        if let Some(mask) = &step.mask {
            for (d, k) in dx.iter_mut().zip(mask) {
                *d *= k;
            }
        }
        if t == 0 {
            grads.w_enc.add_outer(&dx, &trace.features);
        } else {
            let token = tokens[t - 1];
            for (r, d) in dx.iter().enumerate() {
                let cur = grads.w_e.get(r, token);
                grads.w_e.set(r, token, cur + d);
            }
        }
        dm_next = dm_prev;
        dc_next = dc_prev;
    }
    Ok(grads)
}
