use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::SamplingConfig;
use crate::seqmodel::{greedy_decode, PolicyParams, Vocabulary};
use crate::taskgen::{verify_answer, Query};
use crate::trace::segment_response;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub count: usize,
    pub accuracy: f64,
    pub mean_response_length: f64,
}

/// Greedy decoding from `[q]` under the response grammar; truncated responses score 0.
pub fn evaluate(params: &PolicyParams, vocab: &Vocabulary, queries: &[Query], sampling: &SamplingConfig) -> Result<EvalResult> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("evaluation queries"));
    }
    let grammar = sampling.grammar(vocab)?;
    let stop = sampling.stop(vocab);
    let scored: Vec<(u8, usize)> = queries
        .par_iter()
        .map(|q| {
            let gen = greedy_decode(params, &q.tokens, q.tokens.len(), stop, &grammar)?;
            let trace = segment_response(vocab, q, &gen.tokens, &gen.logprobs)?;
            let correct = if gen.truncated { 0 } else { verify_answer(trace.answer(), q) };
            Ok((correct, gen.tokens.len()))
        })
        .collect::<Result<_>>()?;
    let n = scored.len() as f64;
    Ok(EvalResult {
        count: scored.len(),
        accuracy: scored.iter().map(|&(c, _)| f64::from(c)).sum::<f64>() / n,
        mean_response_length: scored.iter().map(|&(_, l)| l as f64).sum::<f64>() / n,
    })
}
