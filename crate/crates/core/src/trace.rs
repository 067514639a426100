//! Rollout representation `o = [s_1 .. s_T, s_c, y]`, step segmentation,
//! probe-prefix assembly and the response grammar used during sampling.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{TokenConstraint, TokenId, Vocabulary};
use crate::taskgen::{verify_answer, Query};

/// One rollout, segmented into reasoning steps, conclusion marker and answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query_tokens: Vec<TokenId>,
    pub response_tokens: Vec<TokenId>,
    /// Content of each non-empty step, excluding its delimiter.
    pub step_spans: Vec<Range<usize>>,
    /// Position of the CONCL token; `None` when the response never concludes.
    pub concl_index: Option<usize>,
    pub answer_span: Range<usize>,
    pub token_logprobs: Vec<f64>,
    pub reward: u8,
    pub truncated: bool,
    pub malformed: bool,
}

impl Trace {
    /// Number of reasoning steps `T`.
    pub fn num_steps(&self) -> usize {
        self.step_spans.len()
    }

    pub fn len(&self) -> usize {
        self.response_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response_tokens.is_empty()
    }

    pub fn answer(&self) -> &[TokenId] {
        &self.response_tokens[self.answer_span.clone()]
    }

    pub fn step(&self, i: usize) -> &[TokenId] {
        &self.response_tokens[self.step_spans[i].clone()]
    }

    /// Response offsets `b_0..=b_{T+1}` splitting the response into `T+1` actions.
    ///
    /// Action `t < T` is step `s_{t+1}` with its trailing delimiter(s); action `T`
    /// is the conclusion marker, the answer and EOS. Leading delimiters belong
    /// to the first action.
    pub fn action_boundaries(&self) -> Vec<usize> {
        let t = self.num_steps();
        let mut b = Vec::with_capacity(t + 2);
        b.push(0);
        b.extend(self.step_spans.iter().skip(1).map(|s| s.start));
        if t > 0 {
            b.push(self.concl_index.unwrap_or(self.response_tokens.len()));
        }
        b.push(self.response_tokens.len());
        b
    }

    pub fn action_spans(&self) -> Vec<Range<usize>> {
        self.action_boundaries().windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// Response tokens that precede step `s_{t+1}`: steps `1..=t` with their delimiters.
    fn steps_prefix(&self, t: usize) -> &[TokenId] {
        let b = self.action_boundaries();
        let end = if t == 0 { 0 } else { b[t] };
        &self.response_tokens[..end]
    }
}

/// Splits `response` into steps, conclusion marker and answer span, and scores it.
///
/// Steps are delimited by STEP_SEP up to the first CONCL; empty steps are dropped.
/// The answer runs from after CONCL to EOS or the end. Without CONCL the trace is
/// kept with every step, an empty answer, reward 0 and `malformed` set.
pub fn segment_response(vocab: &Vocabulary, query: &Query, response: &[TokenId], logprobs: &[f64]) -> Result<Trace> {
    if response.is_empty() {
        return Err(Error::EmptyInput("response"));
    }
    if logprobs.len() != response.len() {
        return Err(Error::Shape(format!(
            "{} log-probs for {} response tokens",
            logprobs.len(),
            response.len()
        )));
    }
    let concl = response.iter().position(|&t| t == vocab.concl());
    let step_region = concl.unwrap_or(response.len());

    let mut step_spans = Vec::new();
    let mut start = 0;
    for i in 0..=step_region {
        if response.get(i).is_none_or(|&t| i == step_region || t == vocab.step_sep()) {
            if i > start {
                step_spans.push(start..i);
            }
            start = i + 1;
        }
    }

    let answer_span = match concl {
        Some(c) => {
            let end = response[c + 1..]
                .iter()
                .position(|&t| t == vocab.eos())
                .map_or(response.len(), |p| c + 1 + p);
            c + 1..end
        }
        None => response.len()..response.len(),
    };
    let reward = match concl {
        Some(_) => verify_answer(&response[answer_span.clone()], query),
        None => 0,
    };
    Ok(Trace {
        query_tokens: query.tokens.clone(),
        response_tokens: response.to_vec(),
        step_spans,
        concl_index: concl,
        answer_span,
        token_logprobs: logprobs.to_vec(),
        reward,
        truncated: false,
        malformed: concl.is_none(),
    })
}

/// `[q, s_1 .. s_t, s_c]`, the prefix whose continuation probability of `y` is the step value `u_t`.
pub fn assemble_probe_prefix(vocab: &Vocabulary, trace: &Trace, t: usize) -> Result<Vec<TokenId>> {
    if t > trace.num_steps() {
        return Err(Error::Index { index: t, max: trace.num_steps() });
    }
    let steps = trace.steps_prefix(t);
    let mut prefix = Vec::with_capacity(trace.query_tokens.len() + steps.len() + 1);
    prefix.extend_from_slice(&trace.query_tokens);
    prefix.extend_from_slice(steps);
    prefix.push(vocab.concl());
    Ok(prefix)
}

/// Zero-step probe `[q, s_c]` straight from a query.
pub fn direct_probe_prefix(vocab: &Vocabulary, query: &Query) -> Vec<TokenId> {
    let mut prefix = query.tokens.clone();
    prefix.push(vocab.concl());
    prefix
}

/// Finite-state grammar for responses: up to `max_steps` steps of at most
/// `max_tokens_per_step` step tokens each closed by STEP_SEP, then CONCL,
/// then 1..=`max_answer_tokens` answer tokens, then EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseGrammar {
    step_sep: TokenId,
    concl: TokenId,
    eos: TokenId,
    step_tokens: Vec<bool>,
    answer_tokens: Vec<bool>,
    max_steps: usize,
    max_tokens_per_step: usize,
    max_answer_tokens: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Step { done: usize, len: usize },
    Answer { len: usize },
    Finished,
}

impl ResponseGrammar {
    /// Steps and answers are written with digit tokens.
    pub fn digits(vocab: &Vocabulary, max_steps: usize, max_tokens_per_step: usize, max_answer_tokens: usize) -> Result<Self> {
        if max_tokens_per_step == 0 || max_answer_tokens == 0 {
            return Err(Error::Config("grammar limits must be at least 1".into()));
        }
        let mut digits = vec![false; vocab.len()];
        for d in 0..10 {
            let id = vocab
                .digit(d)
                .ok_or_else(|| Error::Config(format!("vocabulary lacks digit {d}")))?;
            digits[id as usize] = true;
        }
        Ok(Self {
            step_sep: vocab.step_sep(),
            concl: vocab.concl(),
            eos: vocab.eos(),
            step_tokens: digits.clone(),
            answer_tokens: digits,
            max_steps,
            max_tokens_per_step,
            max_answer_tokens,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Longest response the grammar admits.
    pub fn max_response_len(&self) -> usize {
        self.max_steps * (self.max_tokens_per_step + 1) + 1 + self.max_answer_tokens + 1
    }

    fn phase(&self, generated: &[TokenId]) -> Phase {
        let mut phase = Phase::Step { done: 0, len: 0 };
        for &tok in generated {
            phase = match phase {
                Phase::Step { done, len } if tok == self.step_sep => {
                    Phase::Step { done: done + usize::from(len > 0), len: 0 }
                }
                Phase::Step { .. } if tok == self.concl => Phase::Answer { len: 0 },
                Phase::Step { done, len } => Phase::Step { done, len: len + 1 },
                Phase::Answer { .. } if tok == self.eos => Phase::Finished,
                Phase::Answer { len } => Phase::Answer { len: len + 1 },
                Phase::Finished => Phase::Finished,
            };
        }
        phase
    }
}

impl TokenConstraint for ResponseGrammar {
    fn allowed(&self, generated: &[TokenId], mask: &mut [bool]) {
        mask.fill(false);
        match self.phase(generated) {
            Phase::Step { done, len: 0 } => {
                if done < self.max_steps {
                    mask.copy_from_slice(&self.step_tokens);
                }
                mask[self.concl as usize] = true;
            }
            Phase::Step { len, .. } => {
                if len < self.max_tokens_per_step {
                    mask.copy_from_slice(&self.step_tokens);
                }
                mask[self.step_sep as usize] = true;
            }
            Phase::Answer { len } => {
                if len < self.max_answer_tokens {
                    mask.copy_from_slice(&self.answer_tokens);
                }
                if len > 0 {
                    mask[self.eos as usize] = true;
                }
            }
            Phase::Finished => mask[self.eos as usize] = true,
        }
    }
}
