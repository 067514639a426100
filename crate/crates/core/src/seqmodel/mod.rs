//! Toy autoregressive policy: a linear softmax over one-hot features of the
//! last `K` tokens plus a bias feature.
//!
//! Feature layout for a window of `K` tokens over a vocabulary of size `V`:
//! slot `i` (oldest first) occupies rows `i*V .. (i+1)*V`, the bias is row `K*V`.
//! Contexts shorter than `K` are left-padded with PAD. Logits are summed
//! slot by slot, then the bias row, then divided by the temperature; every
//! routine here follows that order so results are bit-reproducible.

mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use vocab::{TokenId, Vocabulary, CONCL, EOS, PAD, STEP_SEP};

/// Dense row-major matrix; used for both parameters and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Parameters of the linear-softmax policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    weights: Matrix,
    context_window: usize,
    temperature: f64,
    pad: TokenId,
}

impl PolicyParams {
    pub fn new(weights: Matrix, context_window: usize, temperature: f64, pad: TokenId) -> Result<Self> {
        if context_window == 0 {
            return Err(Error::Config("context window must be at least 1".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        let v = weights.cols();
        if v < 4 {
            return Err(Error::Config(format!("vocabulary size {v} is below 4")));
        }
        if weights.rows() != context_window * v + 1 {
            return Err(Error::Shape(format!(
                "weights have {} rows, expected K*V+1 = {}",
                weights.rows(),
                context_window * v + 1
            )));
        }
        if (pad as usize) >= v {
            return Err(Error::Config(format!("pad id {pad} outside vocabulary of {v}")));
        }
        if !weights.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { weights, context_window, temperature, pad })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Row index of the bias feature.
    pub fn bias_row(&self) -> usize {
        self.context_window * self.vocab_size()
    }

    /// Row index of the feature "token `tok` in window slot `slot`" (slot 0 is oldest).
    pub fn slot_row(&self, slot: usize, tok: TokenId) -> usize {
        slot * self.vocab_size() + tok as usize
    }

    pub fn zeros_like(&self) -> Matrix {
        Matrix::zeros(self.feature_dim(), self.vocab_size())
    }
}

/// Weights i.i.d. uniform in `[-scale, scale]` from a ChaCha8 stream seeded with `seed`.
pub fn init_params(vocab: &Vocabulary, context_window: usize, scale: f64, seed: u64) -> Result<PolicyParams> {
    if context_window == 0 {
        return Err(Error::Config("context window must be at least 1".into()));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init scale must be non-negative, got {scale}")));
    }
    let v = vocab.len();
    let mut weights = Matrix::zeros(context_window * v + 1, v);
    if scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in weights.as_mut_slice() {
            *w = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    PolicyParams::new(weights, context_window, 1.0, vocab.pad())
}

fn for_each_active(context: &[TokenId], k: usize, v: usize, pad: TokenId, mut f: impl FnMut(usize)) {
    let n = context.len();
    for slot in 0..k {
        let tok = (n + slot).checked_sub(k).map_or(pad, |pos| context[pos]);
        f(slot * v + tok as usize);
    }
    f(k * v);
}

/// Row indices of the `K+1` active features for `context`.
pub fn active_features(params: &PolicyParams, context: &[TokenId]) -> Vec<usize> {
    let mut rows = Vec::with_capacity(params.context_window + 1);
    for_each_active(context, params.context_window, params.vocab_size(), params.pad, |r| rows.push(r));
    rows
}

/// Dense feature vector: one-hot encodings of the last `K` tokens plus a bias of 1.
pub fn featurize(context: &[TokenId], context_window: usize, vocab: &Vocabulary) -> Vec<f64> {
    let v = vocab.len();
    let mut phi = vec![0.0; context_window * v + 1];
    for_each_active(context, context_window, v, vocab.pad(), |r| phi[r] = 1.0);
    phi
}

/// Categorical distribution over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDist {
    pub probs: Vec<f64>,
}

impl TokenDist {
    pub fn prob(&self, tok: TokenId) -> f64 {
        self.probs[tok as usize]
    }

    /// Natural log of the token probability; `-inf` for impossible tokens.
    pub fn log_prob(&self, tok: TokenId) -> f64 {
        let p = self.prob(tok);
        if p > 0.0 {
            p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Lowest-id token of maximal probability.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn entropy(&self) -> f64 {
        token_entropy(self)
    }
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn token_entropy(dist: &TokenDist) -> f64 {
    -dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Restricts which tokens may be emitted next, given the generated part of the context.
pub trait TokenConstraint: Sync {
    fn allowed(&self, generated: &[TokenId], mask: &mut [bool]);
}

/// Every token is allowed.
#[derive(Clone, Copy, Debug, Default)]
pub struct Unconstrained;

impl TokenConstraint for Unconstrained {
    fn allowed(&self, _generated: &[TokenId], mask: &mut [bool]) {
        mask.fill(true);
    }
}

fn logits(params: &PolicyParams, context: &[TokenId]) -> Result<Vec<f64>> {
    let v = params.vocab_size();
    let mut out = vec![0.0; v];
    for_each_active(context, params.context_window, v, params.pad, |r| {
        for (o, w) in out.iter_mut().zip(params.weights.row(r)) {
            *o += w;
        }
    });
    for o in &mut out {
        *o /= params.temperature;
    }
    if let Some(bad) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit for token {bad}")));
    }
    Ok(out)
}

fn softmax(mut z: Vec<f64>, mask: Option<&[bool]>) -> Result<TokenDist> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = z
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numeric("constraint allows no token".into()));
    }
    let mut sum = 0.0;
    for (i, x) in z.iter_mut().enumerate() {
        *x = if allowed(i) { (*x - max).exp() } else { 0.0 };
        sum += *x;
    }
    for x in &mut z {
        *x /= sum;
    }
    Ok(TokenDist { probs: z })
}

/// `softmax(Wᵀφ(context)/τ)`.
pub fn next_token_dist(params: &PolicyParams, context: &[TokenId]) -> Result<TokenDist> {
    softmax(logits(params, context)?, None)
}

/// Next-token distribution renormalized over the tokens the constraint allows.
/// `context[generated_from..]` is the generated part handed to the constraint.
pub fn next_token_dist_constrained(
    params: &PolicyParams,
    context: &[TokenId],
    generated_from: usize,
    constraint: &dyn TokenConstraint,
) -> Result<TokenDist> {
    let mut mask = vec![false; params.vocab_size()];
    constraint.allowed(&context[generated_from..], &mut mask);
    softmax(logits(params, context)?, Some(&mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopRule {
    pub eos: TokenId,
    pub max_len: usize,
}

/// Tokens produced by [`sample_tokens`] or [`greedy_decode`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    /// Log-probability of each emitted token under the sampling distribution.
    pub logprobs: Vec<f64>,
    /// Entropy (nats) of the sampling distribution at each position.
    pub entropies: Vec<f64>,
    /// `max_len` was reached without emitting EOS.
    pub truncated: bool,
}

fn draw(dist: &TokenDist, u: f64) -> TokenId {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i as TokenId;
            }
        }
    }
    last as TokenId
}

fn decode_with<F>(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    stop: StopRule,
    constraint: &dyn TokenConstraint,
    mut pick: F,
) -> Result<Generation>
where
    F: FnMut(&TokenDist) -> TokenId,
{
    if stop.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    if generated_from > prefix.len() {
        return Err(Error::Index { index: generated_from, max: prefix.len() });
    }
    let mut context = prefix.to_vec();
    let mut out = Generation { truncated: true, ..Generation::default() };
    for _ in 0..stop.max_len {
        let dist = next_token_dist_constrained(params, &context, generated_from, constraint)?;
        let tok = pick(&dist);
        out.logprobs.push(dist.log_prob(tok));
        out.entropies.push(dist.entropy());
        out.tokens.push(tok);
        context.push(tok);
        if tok == stop.eos {
            out.truncated = false;
            break;
        }
    }
    Ok(out)
}

/// Autoregressive categorical sampling until EOS or `max_len` tokens.
pub fn sample_tokens<R: Rng + ?Sized>(
    params: &PolicyParams,
    prefix: &[TokenId],
    stop: StopRule,
    rng: &mut R,
) -> Result<Generation> {
    sample_tokens_constrained(params, prefix, prefix.len(), stop, &Unconstrained, rng)
}

pub fn sample_tokens_constrained<R: Rng + ?Sized>(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    stop: StopRule,
    constraint: &dyn TokenConstraint,
    rng: &mut R,
) -> Result<Generation> {
    decode_with(params, prefix, generated_from, stop, constraint, |d| draw(d, rng.random::<f64>()))
}

/// Argmax decoding with ties broken toward the lowest token id.
pub fn greedy_decode(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    stop: StopRule,
    constraint: &dyn TokenConstraint,
) -> Result<Generation> {
    decode_with(params, prefix, generated_from, stop, constraint, TokenDist::argmax)
}

/// Teacher-forced `Σ log π(target_i | prefix ++ target_<i)`; `-inf` if any token is impossible.
pub fn sequence_logprob(params: &PolicyParams, prefix: &[TokenId], target: &[TokenId]) -> Result<f64> {
    sequence_logprob_constrained(params, prefix, prefix.len(), target, &Unconstrained)
}

pub fn sequence_logprob_constrained(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    target: &[TokenId],
    constraint: &dyn TokenConstraint,
) -> Result<f64> {
    Ok(token_logprobs(params, prefix, generated_from, target, constraint)?.iter().sum())
}

/// Per-token teacher-forced log-probabilities.
pub fn token_logprobs(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    target: &[TokenId],
    constraint: &dyn TokenConstraint,
) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target sequence"));
    }
    let mut context = prefix.to_vec();
    let mut out = Vec::with_capacity(target.len());
    for &tok in target {
        let dist = next_token_dist_constrained(params, &context, generated_from, constraint)?;
        out.push(dist.log_prob(tok));
        context.push(tok);
    }
    Ok(out)
}

/// Adds `weight * ∇_W log π(token | context)` into `grad` and returns the log-probability.
///
/// The gradient is `φ(context) ⊗ (e_token − π)/τ`, touching only the `K+1` active rows.
pub fn accumulate_token_grad(
    params: &PolicyParams,
    context: &[TokenId],
    generated_from: usize,
    token: TokenId,
    weight: f64,
    constraint: &dyn TokenConstraint,
    grad: &mut Matrix,
) -> Result<f64> {
    let dist = next_token_dist_constrained(params, context, generated_from, constraint)?;
    let logp = dist.log_prob(token);
    if !logp.is_finite() {
        return Err(Error::Numeric(format!(
            "log-probability of token {token} is {logp}; gradient undefined"
        )));
    }
    let scale = weight / params.temperature;
    let v = params.vocab_size();
    for_each_active(context, params.context_window, v, params.pad, |r| {
        let row = grad.row_mut(r);
        for (a, g) in row.iter_mut().enumerate() {
            let e = if a == token as usize { 1.0 } else { 0.0 };
            *g += scale * (e - dist.probs[a]);
        }
    });
    Ok(logp)
}

/// Analytic gradient of [`sequence_logprob`] with respect to the weights.
pub fn grad_logprob(params: &PolicyParams, prefix: &[TokenId], target: &[TokenId]) -> Result<Matrix> {
    grad_logprob_constrained(params, prefix, prefix.len(), target, &Unconstrained)
}

pub fn grad_logprob_constrained(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    target: &[TokenId],
    constraint: &dyn TokenConstraint,
) -> Result<Matrix> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target sequence"));
    }
    let mut grad = params.zeros_like();
    let mut context = prefix.to_vec();
    for &tok in target {
        accumulate_token_grad(params, &context, generated_from, tok, 1.0, constraint, &mut grad)?;
        context.push(tok);
    }
    Ok(grad)
}
