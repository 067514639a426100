use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{
    accumulate_policy_gradient_into, grpo_token_advantages, normalize_group_rewards_with, step_advantages,
    AdvantageSettings, GroupRewards, WeightedTrace,
};
use crate::error::{Error, Result};
use crate::harness::checkpoint::save_checkpoint;
use crate::harness::config::{Method, TrainConfig};
use crate::harness::eval::{evaluate, EvalResult};
use crate::harness::metrics::{log_metrics, MetricsRecord};
use crate::harness::rollout::{run_batch, Rollout, RolloutContext};
use crate::seeding::derive_seed;
use crate::seqmodel::{init_params, PolicyParams, TokenConstraint, Vocabulary};
use crate::taskgen::{Query, TaskGenerator};
use crate::trace::{assemble_probe_prefix, ResponseGrammar};
use crate::vvp::{probe_step_values, probe_value, ValueMode};

const TAG_INIT: u64 = 1;
const TAG_QUERY: u64 = 2;
const TAG_ROLLOUT: u64 = 3;
const TAG_EVAL: u64 = 4;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Advantages and diagnostics for one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRollout {
    pub token_adv: Vec<f64>,
    pub u_last: f64,
    pub prune_index: Option<usize>,
}

/// Shaped rewards `r_j = verify_j − length_penalty · |o_j|`.
pub fn group_rewards(group: &[Rollout], length_penalty: f64) -> Vec<f64> {
    group
        .iter()
        .map(|r| f64::from(r.trace.reward) - length_penalty * r.trace.len() as f64)
        .collect()
}

#[derive(Clone, Copy)]
pub struct ScoringContext<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocabulary,
    pub constraint: &'a dyn TokenConstraint,
    pub method: Method,
    pub value_mode: ValueMode,
    pub settings: AdvantageSettings,
}

/// Token advantages for every rollout of a group.
///
/// Rollouts that never reached the conclusion marker cannot be probed and
/// fall back to the group-relative reward on every token.
pub fn score_group(ctx: ScoringContext<'_>, query: &Query, group: &[Rollout], rewards: &GroupRewards) -> Result<Vec<ScoredRollout>> {
    group
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let trace = &r.trace;
            let grpo = || grpo_token_advantages(rewards, j, trace);
            if trace.malformed {
                return Ok(ScoredRollout { token_adv: grpo(), u_last: 0.0, prune_index: None });
            }
            let q_len = trace.query_tokens.len();
            match ctx.method {
                Method::Grpo => {
                    let prefix = assemble_probe_prefix(ctx.vocab, trace, trace.num_steps())?;
                    let u_last = probe_value(ctx.params, &prefix, q_len, &query.answer, ctx.value_mode, ctx.constraint)?;
                    Ok(ScoredRollout { token_adv: grpo(), u_last, prune_index: None })
                }
                Method::Sspo => {
                    let profile =
                        probe_step_values(ctx.params, ctx.vocab, trace, &query.answer, ctx.value_mode, ctx.constraint)?;
                    let table = step_advantages(trace, rewards, j, &profile.u, &ctx.settings)?;
                    Ok(ScoredRollout {
                        token_adv: table.token_adv,
                        u_last: profile.last_value(),
                        prune_index: table.prune_index,
                    })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub method: Method,
    pub seed: u64,
    pub updates: usize,
    pub initial_eval: Option<EvalResult>,
    pub final_eval: Option<EvalResult>,
}

/// Stateful training loop; one call to [`Trainer::step`] is one update.
pub struct Trainer {
    cfg: TrainConfig,
    vocab: Vocabulary,
    generator: TaskGenerator,
    grammar: ResponseGrammar,
    params: PolicyParams,
    update: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = cfg.model.vocab();
        let params = init_params(&vocab, cfg.model.context_window, cfg.model.init_scale, derive_seed(&[cfg.seed, TAG_INIT]))?
            .with_temperature(cfg.sampling.temperature)?;
        Self::with_params(cfg, params)
    }

    pub fn with_params(cfg: TrainConfig, params: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        let vocab = cfg.model.vocab();
        if params.vocab_size() != vocab.len() {
            return Err(Error::Config(format!(
                "parameters cover {} tokens but the configured vocabulary has {}",
                params.vocab_size(),
                vocab.len()
            )));
        }
        let generator = TaskGenerator::new(cfg.task.clone(), vocab.clone())?;
        let grammar = cfg.sampling.grammar(&vocab)?;
        Ok(Self { cfg, vocab, generator, grammar, params, update: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn grammar(&self) -> &ResponseGrammar {
        &self.grammar
    }

    /// Queries of the held-out evaluation set.
    pub fn eval_set(&self) -> Result<Vec<Query>> {
        self.generator.generate_set(derive_seed(&[self.cfg.seed, TAG_EVAL]), self.cfg.eval_queries)
    }

    pub fn evaluate(&self, queries: &[Query]) -> Result<EvalResult> {
        evaluate(&self.params, &self.vocab, queries, &self.cfg.sampling)
    }

    /// Training queries of update `u`.
    pub fn batch(&self, u: usize) -> Result<Vec<Query>> {
        let b = self.cfg.batch_queries;
        (0..b)
            .map(|i| {
                let id = (u * b + i) as u64;
                self.generator.query(id, derive_seed(&[self.cfg.seed, TAG_QUERY, u as u64, i as u64]))
            })
            .collect()
    }

    /// Samples a batch, computes advantages and the gradient, and takes one
    /// ascent step. Parameters are left untouched if the gradient is not finite.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let queries = self.batch(self.update)?;
        let rollout_ctx = RolloutContext {
            params: &self.params,
            vocab: &self.vocab,
            stop: cfg.sampling.stop(&self.vocab),
            constraint: &self.grammar,
        };
        let groups = run_batch(rollout_ctx, &queries, cfg.n, derive_seed(&[cfg.seed, TAG_ROLLOUT, self.update as u64]))?;

        let scoring = ScoringContext {
            params: &self.params,
            vocab: &self.vocab,
            constraint: &self.grammar,
            method: cfg.method,
            value_mode: cfg.value_mode,
            settings: cfg.advantage_settings(),
        };
        let mut degenerate = 0usize;
        let mut scored = Vec::with_capacity(groups.len());
        for (query, group) in queries.iter().zip(&groups) {
            let rewards = normalize_group_rewards_with(&group_rewards(group, cfg.length_penalty), cfg.epsilon, cfg.std_kind)?;
            degenerate += usize::from(rewards.degenerate);
            scored.push(score_group(scoring, query, group, &rewards)?);
        }

        let items: Vec<WeightedTrace<'_>> = groups
            .iter()
            .flatten()
            .zip(scored.iter().flatten())
            .map(|(r, s)| WeightedTrace { trace: &r.trace, token_adv: &s.token_adv })
            .collect();
        let mut grad = self.params.zeros_like();
        let loss = accumulate_policy_gradient_into(&self.params, &items, items.len(), &self.grammar, &mut grad)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("update {}: {msg}", self.update)),
                other => other,
            })?;
        if !grad.is_finite() {
            return Err(Error::Numeric(format!("update {}: non-finite gradient", self.update)));
        }

        let rollouts: Vec<&Rollout> = groups.iter().flatten().collect();
        let scored: Vec<&ScoredRollout> = scored.iter().flatten().collect();
        let count = rollouts.len() as f64;
        let tokens: usize = rollouts.iter().map(|r| r.entropies.len()).sum();
        let entropy: f64 = rollouts.iter().flat_map(|r| r.entropies.iter()).sum();
        let pruned: Vec<f64> = scored.iter().filter_map(|s| s.prune_index.map(|e| e as f64)).collect();
        let record = MetricsRecord {
            update: self.update,
            accuracy: rollouts.iter().map(|r| f64::from(r.trace.reward)).sum::<f64>() / count,
            mean_response_length: rollouts.iter().map(|r| r.trace.len() as f64).sum::<f64>() / count,
            mean_token_entropy: if tokens == 0 { 0.0 } else { entropy / tokens as f64 },
            mean_prune_index: if pruned.is_empty() { None } else { Some(pruned.iter().sum::<f64>() / pruned.len() as f64) },
            mean_u_t: scored.iter().map(|s| s.u_last).sum::<f64>() / count,
            degenerate_group_fraction: degenerate as f64 / groups.len() as f64,
            pruned_fraction: pruned.len() as f64 / count,
            loss,
            wall_time: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        record.validate()?;

        let lr = cfg.learning_rate;
        self.params.weights_mut().add_scaled(&grad, lr)?;
        self.update += 1;
        Ok(record)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub vocab: Vocabulary,
    pub metrics: Vec<MetricsRecord>,
    pub summary: TrainSummary,
}

/// Runs `cfg.updates` updates in memory.
pub fn train_run(cfg: &TrainConfig) -> Result<TrainOutput> {
    run(cfg, |_| Ok(()), |_| Ok(()))
}

fn run(
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
    mut on_abort: impl FnMut(&Trainer) -> Result<()>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let eval_set = if cfg.eval_queries > 0 { Some(trainer.eval_set()?) } else { None };
    let initial_eval = eval_set.as_deref().map(|q| trainer.evaluate(q)).transpose()?;
    let mut metrics = Vec::with_capacity(cfg.updates);
    for _ in 0..cfg.updates {
        let record = match trainer.step().and_then(|r| on_record(&r).map(|_| r)) {
            Ok(r) => r,
            Err(e) => {
                on_abort(&trainer)?;
                return Err(e);
            }
        };
        metrics.push(record);
    }
    let final_eval = eval_set.as_deref().map(|q| trainer.evaluate(q)).transpose()?;
    let summary = TrainSummary { method: cfg.method, seed: cfg.seed, updates: cfg.updates, initial_eval, final_eval };
    Ok(TrainOutput { params: trainer.params, vocab: trainer.vocab, metrics, summary })
}

/// Runs training and writes `config.json`, `metrics.jsonl`, `checkpoint.bin`
/// and `summary.json` under `out`. If an update fails, the checkpoint holds
/// the last parameters that produced a finite gradient.
pub fn train_to_dir(cfg: &TrainConfig, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let cfg_json = serde_json::to_value(cfg)?;
    fs::write(out.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg_json)? + "\n")?;
    let mut sink = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    let ck_path = out.join(CHECKPOINT_FILE);
    let output = run(
        cfg,
        |r| log_metrics(r, &mut sink),
        |t| save_checkpoint(t.params(), t.vocab(), Some(cfg_json.clone()), cfg.seed, &ck_path),
    )?;
    sink.flush()?;
    save_checkpoint(&output.params, &output.vocab, Some(cfg_json), cfg.seed, &ck_path)?;
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&output.summary)? + "\n")?;
    Ok(output)
}
