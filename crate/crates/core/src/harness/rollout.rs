use rayon::prelude::*;

use crate::error::Result;
use crate::seeding;
use crate::seqmodel::{sample_tokens_constrained, PolicyParams, StopRule, TokenConstraint, Vocabulary};
use crate::taskgen::Query;
use crate::trace::{segment_response, Trace};

/// A sampled, segmented and scored response.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub trace: Trace,
    /// Entropy of the sampling distribution at each response position.
    pub entropies: Vec<f64>,
}

/// Everything needed to sample a response.
#[derive(Clone, Copy)]
pub struct RolloutContext<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocabulary,
    pub stop: StopRule,
    pub constraint: &'a dyn TokenConstraint,
}

/// Samples rollout `j` of `query` from the stream derived from `(seed, query.id, j)`.
pub fn sample_rollout(ctx: RolloutContext<'_>, query: &Query, seed: u64, j: usize) -> Result<Rollout> {
    let mut rng = seeding::stream(&[seed, query.id, j as u64]);
    let q_len = query.tokens.len();
    let gen = sample_tokens_constrained(ctx.params, &query.tokens, q_len, ctx.stop, ctx.constraint, &mut rng)?;
    let mut trace = segment_response(ctx.vocab, query, &gen.tokens, &gen.logprobs)?;
    trace.truncated = gen.truncated;
    if gen.truncated {
        trace.reward = 0;
    }
    Ok(Rollout { trace, entropies: gen.entropies })
}

/// `n` independent rollouts for one query. Each rollout owns its random
/// stream, so the result does not depend on how the work is scheduled.
pub fn run_group(ctx: RolloutContext<'_>, query: &Query, n: usize, seed: u64) -> Result<Vec<Rollout>> {
    (0..n).into_par_iter().map(|j| sample_rollout(ctx, query, seed, j)).collect()
}

/// Groups for a whole batch, parallel across every `(query, j)` pair.
pub fn run_batch(ctx: RolloutContext<'_>, queries: &[Query], n: usize, seed: u64) -> Result<Vec<Vec<Rollout>>> {
    let flat: Vec<Rollout> = (0..queries.len() * n)
        .into_par_iter()
        .map(|k| sample_rollout(ctx, &queries[k / n], seed, k % n))
        .collect::<Result<_>>()?;
    let mut groups = Vec::with_capacity(queries.len());
    let mut it = flat.into_iter();
    for _ in queries {
        groups.push(it.by_ref().take(n).collect());
    }
    Ok(groups)
}
