//! Group-relative advantages with step values and error-step pruning.
//!
//! For rollout `j` of a group with normalized reward `r̂` and normalized step
//! values `v̂_0..v̂_T` (plus the terminal `v̂_{T+1} = 0`), action `t` (step
//! `s_{t+1}` for `t < T`, the conclusion and answer for `t = T`) receives
//!
//! ```text
//! δ̃_t = r̂·ρ(t) + I(t)·(γ·v̂_{t+1} − v̂_t)
//! A_t = δ̃_t + γλ·A_{t+1}
//! ```
//!
//! where `ρ(t)` is 1 at every step (or only at `t = T` in terminal mode) and
//! `I(t)` switches off once the step values first stop increasing. Actions
//! with `I(t) = 0` also receive no policy gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{accumulate_token_grad, Matrix, PolicyParams, TokenConstraint};
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The normalized reward enters every action's delta.
    #[default]
    EveryStep,
    /// The normalized reward enters only the final action's delta.
    Terminal,
}

/// Which actions the pruning indicator keeps, given prune index `e*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneGate {
    /// Keep steps `s_1..=s_{e*}`, i.e. actions `t < e*`; the declining step keeps its own delta.
    #[default]
    ThroughDecline,
    /// Keep actions `t <= e*`, one further action than `ThroughDecline`.
    AfterDecline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub r: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub eps: f64,
    pub r_hat: Vec<f64>,
    pub degenerate: bool,
}

impl GroupRewards {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `σ + ε`, the shared denominator of reward and value normalization.
    pub fn scale(&self) -> f64 {
        self.std + self.eps
    }
}

/// `r̂_j = (r_j − r̄)/(σ + ε)` with the population standard deviation.
pub fn normalize_group_rewards(r: &[f64], eps: f64) -> Result<GroupRewards> {
    normalize_group_rewards_with(r, eps, StdKind::Population)
}

pub fn normalize_group_rewards_with(r: &[f64], eps: f64, std_kind: StdKind) -> Result<GroupRewards> {
    let n = r.len();
    if n < 2 {
        return Err(Error::GroupSize(n));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("epsilon must be non-negative, got {eps}")));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite reward".into()));
    }
    let mean = r.iter().sum::<f64>() / n as f64;
    let ss = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let denom = match std_kind {
        StdKind::Population => n as f64,
        StdKind::Sample => (n - 1) as f64,
    };
    let std = (ss / denom).sqrt();
    let degenerate = r.iter().all(|&x| x == r[0]);
    let r_hat = if degenerate {
        vec![0.0; n]
    } else {
        r.iter().map(|x| (x - mean) / (std + eps)).collect()
    };
    Ok(GroupRewards { r: r.to_vec(), mean, std: if degenerate { 0.0 } else { std }, eps, r_hat, degenerate })
}

/// `v̂_t = (u_t − r̄)/(σ + ε)` for `t ∈ [0, T]`, followed by the terminal `v̂_{T+1} = 0`.
/// Degenerate groups are only centered.
pub fn normalize_values(u: &[f64], group: &GroupRewards) -> Vec<f64> {
    let scale = if group.degenerate { 1.0 } else { group.scale() };
    u.iter()
        .map(|x| (x - group.mean) / scale)
        .chain(std::iter::once(0.0))
        .collect()
}

/// Smallest `e >= 1` with `values[e] <= values[e-1]` (`<` when `strict`); `None`
/// if the sequence never stops increasing.
pub fn prune_index(values: &[f64], strict: bool) -> Option<usize> {
    (1..values.len()).find(|&e| {
        if strict {
            values[e] < values[e - 1]
        } else {
            values[e] <= values[e - 1]
        }
    })
}

/// Indicator `I(t)` over the `num_actions = T+1` actions.
pub fn action_mask(num_actions: usize, prune: Option<usize>, gate: PruneGate) -> Vec<bool> {
    (0..num_actions)
        .map(|t| match (prune, gate) {
            (None, _) => true,
            (Some(e), PruneGate::ThroughDecline) => t < e,
            (Some(e), PruneGate::AfterDecline) => t <= e,
        })
        .collect()
}

/// Temporal deltas for rollout `j`; `v_hat` must hold `T+2` entries.
pub fn compute_deltas(
    group: &GroupRewards,
    j: usize,
    v_hat: &[f64],
    prune: Option<usize>,
    gamma: f64,
    mode: RewardMode,
) -> Result<Vec<f64>> {
    compute_deltas_gated(group, j, v_hat, prune, gamma, mode, PruneGate::default())
}

pub fn compute_deltas_gated(
    group: &GroupRewards,
    j: usize,
    v_hat: &[f64],
    prune: Option<usize>,
    gamma: f64,
    mode: RewardMode,
    gate: PruneGate,
) -> Result<Vec<f64>> {
    if j >= group.len() {
        return Err(Error::Index { index: j, max: group.len().saturating_sub(1) });
    }
    if v_hat.len() < 2 {
        return Err(Error::Shape(format!("v_hat needs T+2 >= 2 entries, got {}", v_hat.len())));
    }
    let num_actions = v_hat.len() - 1;
    let last = num_actions - 1;
    let mask = action_mask(num_actions, prune, gate);
    let r_hat = group.r_hat[j];
    Ok((0..num_actions)
        .map(|t| {
            let reward = match mode {
                RewardMode::EveryStep => r_hat,
                RewardMode::Terminal if t == last => r_hat,
                RewardMode::Terminal => 0.0,
            };
            if mask[t] {
                reward + (gamma * v_hat[t + 1] - v_hat[t])
            } else {
                reward
            }
        })
        .collect())
}

/// `A_t = Σ_i (γλ)^i δ̃_{t+i}` via the backward recursion.
pub fn gae_advantages(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let decay = gamma * lambda;
    let mut adv = vec![0.0; deltas.len()];
    let mut next = 0.0;
    for t in (0..deltas.len()).rev() {
        next = deltas[t] + decay * next;
        adv[t] = next;
    }
    adv
}

/// Paints each action's advantage over its tokens; masked actions get 0.
pub fn assign_token_advantages(trace: &Trace, step_adv: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let spans = trace.action_spans();
    if step_adv.len() != spans.len() || mask.len() != spans.len() {
        return Err(Error::Shape(format!(
            "{} actions but {} advantages and {} mask entries",
            spans.len(),
            step_adv.len(),
            mask.len()
        )));
    }
    let mut out = vec![0.0; trace.len()];
    for ((span, &a), &keep) in spans.into_iter().zip(step_adv).zip(mask) {
        if keep {
            out[span].fill(a);
        }
    }
    Ok(out)
}

/// GRPO baseline: every token of rollout `j` gets `r̂_j`.
pub fn grpo_token_advantages(group: &GroupRewards, j: usize, trace: &Trace) -> Vec<f64> {
    vec![group.r_hat[j]; trace.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSettings {
    pub gamma: f64,
    pub lambda: f64,
    pub reward_mode: RewardMode,
    pub pruning: bool,
    pub use_strict: bool,
    pub gate: PruneGate,
}

impl Default for AdvantageSettings {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 0.95,
            reward_mode: RewardMode::EveryStep,
            pruning: true,
            use_strict: false,
            gate: PruneGate::ThroughDecline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTable {
    pub v_hat: Vec<f64>,
    pub prune_index: Option<usize>,
    pub deltas: Vec<f64>,
    pub step_adv: Vec<f64>,
    pub token_adv: Vec<f64>,
    pub grad_mask: Vec<bool>,
    pub gamma: f64,
    pub lambda: f64,
    pub reward_mode: RewardMode,
}

/// Full per-rollout pipeline from raw step values `u_0..=u_T` to token advantages.
pub fn step_advantages(
    trace: &Trace,
    group: &GroupRewards,
    j: usize,
    u: &[f64],
    settings: &AdvantageSettings,
) -> Result<AdvantageTable> {
    if u.len() != trace.num_steps() + 1 {
        return Err(Error::Shape(format!(
            "{} step values for a trace with {} steps",
            u.len(),
            trace.num_steps()
        )));
    }
    let v_hat = normalize_values(u, group);
    // v̂ is a positive affine map of u, so both give the same prune index.
    let prune = if settings.pruning { prune_index(u, settings.use_strict) } else { None };
    let deltas = compute_deltas_gated(group, j, &v_hat, prune, settings.gamma, settings.reward_mode, settings.gate)?;
    let step_adv = gae_advantages(&deltas, settings.gamma, settings.lambda);
    let grad_mask = action_mask(step_adv.len(), prune, settings.gate);
    let token_adv = assign_token_advantages(trace, &step_adv, &grad_mask)?;
    Ok(AdvantageTable {
        v_hat,
        prune_index: prune,
        deltas,
        step_adv,
        token_adv,
        grad_mask,
        gamma: settings.gamma,
        lambda: settings.lambda,
        reward_mode: settings.reward_mode,
    })
}

/// One rollout and the advantage of each of its response tokens.
#[derive(Clone, Copy, Debug)]
pub struct WeightedTrace<'a> {
    pub trace: &'a Trace,
    pub token_adv: &'a [f64],
}

/// `Σ adv · ∇ log π(token | prefix) / rollout_count` over every token with a
/// non-zero advantage, in item order then token order, plus the matching
/// surrogate loss `−Σ adv · log π / rollout_count`.
pub fn accumulate_policy_gradient(
    params: &PolicyParams,
    items: &[WeightedTrace<'_>],
    rollout_count: usize,
    constraint: &dyn TokenConstraint,
) -> Result<(Matrix, f64)> {
    let mut grad = params.zeros_like();
    let loss = accumulate_policy_gradient_into(params, items, rollout_count, constraint, &mut grad)?;
    Ok((grad, loss))
}

/// Like [`accumulate_policy_gradient`] but adds into an existing buffer.
pub fn accumulate_policy_gradient_into(
    params: &PolicyParams,
    items: &[WeightedTrace<'_>],
    rollout_count: usize,
    constraint: &dyn TokenConstraint,
    grad: &mut Matrix,
) -> Result<f64> {
    if rollout_count == 0 {
        return Err(Error::Config("rollout count must be positive".into()));
    }
    let norm = 1.0 / rollout_count as f64;
    let mut loss = 0.0;
    for (idx, item) in items.iter().enumerate() {
        let trace = item.trace;
        if item.token_adv.len() != trace.len() {
            return Err(Error::Shape(format!(
                "trace {idx}: {} advantages for {} tokens",
                item.token_adv.len(),
                trace.len()
            )));
        }
        let generated_from = trace.query_tokens.len();
        let mut context = trace.query_tokens.clone();
        for (&tok, &adv) in trace.response_tokens.iter().zip(item.token_adv) {
            if adv != 0.0 {
                let logp = accumulate_token_grad(params, &context, generated_from, tok, adv * norm, constraint, grad)
                    .map_err(|e| match e {
                        Error::Numeric(msg) => Error::Numeric(format!("trace {idx}: {msg}")),
                        other => other,
                    })?;
                loss -= adv * logp * norm;
            }
            context.push(tok);
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::seqmodel::{init_params, sequence_logprob, Unconstrained, Vocabulary};
    use crate::taskgen::{Query, TaskKind};
    use crate::trace::segment_response;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn group_with_rhat(r_hat: f64) -> GroupRewards {
        GroupRewards { r: vec![1.0, 0.0], mean: 0.0, std: 1.0, eps: 0.0, r_hat: vec![r_hat, -r_hat], degenerate: false }
    }

    fn trace(v: &Vocabulary, r: &str) -> Trace {
        let q = Query {
            id: 0,
            tokens: v.encode("3 + 4 - 2 =").unwrap(),
            answer: v.encode("5").unwrap(),
            reference_steps: vec![],
            kind: TaskKind::ChainArith,
            seed: 0,
        };
        let toks = v.encode(r).unwrap();
        segment_response(v, &q, &toks, &vec![0.0; toks.len()]).unwrap()
    }

    #[test]
    fn group_normalization_examples() {
        let g = normalize_group_rewards(&[1.0, 0.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!((g.mean, g.std), (0.5, 0.5));
        assert_eq!(g.r_hat, vec![1.0, -1.0, -1.0, 1.0]);

        let g = normalize_group_rewards(&[1.0; 4], 1e-8).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.r_hat, vec![0.0; 4]);

        let g = normalize_group_rewards(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        // population std = sqrt(3)/4
        let s = 3f64.sqrt() / 4.0;
        let expect = [0.75 / s, -0.25 / s, -0.25 / s, -0.25 / s];
        assert!(close(&g.r_hat, &expect, 1e-12));
        assert!(close(&g.r_hat, &[1.7320508, -0.5773503, -0.5773503, -0.5773503], 1e-7));

        assert!(matches!(normalize_group_rewards(&[1.0], 0.0), Err(Error::GroupSize(1))));

        let g = normalize_group_rewards_with(&[1.0, 0.0], 0.0, StdKind::Sample).unwrap();
        assert!(close(&g.r_hat, &[0.5 / 0.5f64.sqrt(), -0.5 / 0.5f64.sqrt()], 1e-12));
    }

    #[test]
    fn value_normalization_examples() {
        let g = GroupRewards { r: vec![], mean: 0.25, std: 0.4330127, eps: 0.0, r_hat: vec![], degenerate: false };
        let v = normalize_values(&[0.25, 0.75], &g);
        assert!(close(&v, &[0.0, 1.1547005, 0.0], 1e-6));

        let g = GroupRewards { r: vec![], mean: 0.0, std: 1.0, eps: 0.0, r_hat: vec![], degenerate: false };
        assert_eq!(normalize_values(&[0.3, 0.6], &g), vec![0.3, 0.6, 0.0]);

        let g = normalize_group_rewards(&[1.0, 1.0], 1e-8).unwrap();
        assert_eq!(normalize_values(&[0.5, 0.5], &g), vec![-0.5, -0.5, 0.0]);
    }

    #[test]
    fn prune_index_examples() {
        assert_eq!(prune_index(&[0.1, 0.3, 0.2, 0.4], false), Some(2));
        assert_eq!(prune_index(&[0.1, 0.2, 0.3], false), None);
        assert_eq!(prune_index(&[0.5, 0.5], false), Some(1));
        assert_eq!(prune_index(&[0.5, 0.5], true), None);
        assert_eq!(prune_index(&[0.5], false), None);
    }

    #[test]
    fn delta_examples() {
        let g = group_with_rhat(1.0);
        let v = [0.0, 0.5, 1.0, 0.0];
        let d = compute_deltas(&g, 0, &v, None, 1.0, RewardMode::EveryStep).unwrap();
        assert!(close(&d, &[1.5, 1.5, 0.0], 1e-15));
        let d = compute_deltas(&g, 0, &v, None, 1.0, RewardMode::Terminal).unwrap();
        assert!(close(&d, &[0.5, 0.5, 0.0], 1e-15));

        let v = [0.2, 0.5, 0.3, 0.4, 0.0];
        let d = compute_deltas(&g, 0, &v, Some(2), 1.0, RewardMode::EveryStep).unwrap();
        assert!(close(&d, &[1.3, 0.8, 1.0, 1.0], 1e-12));
        assert_eq!(d[3], 1.0);

        let d = compute_deltas_gated(&g, 0, &v, Some(2), 1.0, RewardMode::EveryStep, PruneGate::AfterDecline).unwrap();
        assert!(close(&d, &[1.3, 0.8, 1.1, 1.0], 1e-12));

        assert!(matches!(compute_deltas(&g, 0, &[0.0], None, 1.0, RewardMode::EveryStep), Err(Error::Shape(_))));
    }

    #[test]
    fn gae_examples() {
        assert!(close(&gae_advantages(&[1.5, 1.5, 1.0], 1.0, 1.0), &[4.0, 2.5, 1.0], 1e-15));
        assert_eq!(gae_advantages(&[1.5, -2.0, 1.0], 0.9, 0.0), vec![1.5, -2.0, 1.0]);
        assert!(close(&gae_advantages(&[1.5, 1.5, 1.0], 1.0, 0.5), &[2.5, 2.0, 1.0], 1e-15));
    }

    #[test]
    fn token_painting() {
        let v = Vocabulary::standard(0);
        let t = trace(&v, "7 S 5 S A 5 .");
        let a = [0.1, 0.2, 0.3];
        let out = assign_token_advantages(&t, &a, &[true; 3]).unwrap();
        assert_eq!(out, vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.3]);
        let out = assign_token_advantages(&t, &a, &[true, true, false]).unwrap();
        assert_eq!(out, vec![0.1, 0.1, 0.2, 0.2, 0.0, 0.0, 0.0]);

        let t0 = trace(&v, "A 5 .");
        assert_eq!(assign_token_advantages(&t0, &[0.7], &[true]).unwrap(), vec![0.7; 3]);
        assert!(matches!(assign_token_advantages(&t0, &[0.7, 0.1], &[true, true]), Err(Error::Shape(_))));
    }

    #[test]
    fn grpo_painting() {
        let v = Vocabulary::standard(0);
        let t = trace(&v, "7 S 5 S A 5 .");
        assert_eq!(grpo_token_advantages(&group_with_rhat(1.0), 0, &t), vec![1.0; 7]);
        let degenerate = normalize_group_rewards(&[0.0, 0.0], 1e-8).unwrap();
        assert_eq!(grpo_token_advantages(&degenerate, 1, &t), vec![0.0; 7]);
        let g = normalize_group_rewards(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let out = grpo_token_advantages(&g, 1, &t);
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|&x| (x + 0.5773503).abs() < 1e-7));
    }

    #[test]
    fn pruned_pipeline() {
        let v = Vocabulary::standard(0);
        let t = trace(&v, "7 S 5 S 5 S A 5 .");
        let g = normalize_group_rewards(&[1.0, 0.0], 0.0).unwrap();
        let u = [0.1, 0.6, 0.5, 0.9];
        let table = step_advantages(&t, &g, 0, &u, &AdvantageSettings { lambda: 1.0, ..Default::default() }).unwrap();
        assert_eq!(table.prune_index, Some(2));
        assert_eq!(table.grad_mask, vec![true, true, false, false]);
        assert_eq!(&table.token_adv[4..], &[0.0; 5]);
        // pruned actions degrade to the plain normalized reward
        assert_eq!(table.deltas[2], 1.0);
        assert_eq!(table.deltas[3], 1.0);
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let v = Vocabulary::standard(0);
        let p = init_params(&v, 3, 0.5, 1).unwrap();
        let t = trace(&v, "7 S 5 S A 5 .");
        let adv = vec![0.0; t.len()];
        let (g, loss) =
            accumulate_policy_gradient(&p, &[WeightedTrace { trace: &t, token_adv: &adv }], 1, &Unconstrained).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_token_gradient_matches_grad_logprob() {
        let v = Vocabulary::standard(0);
        let p = init_params(&v, 3, 0.5, 2).unwrap();
        let t = trace(&v, "7 S 5 S A 5 .");
        let mut adv = vec![0.0; t.len()];
        adv[2] = 1.0;
        let (g, _) =
            accumulate_policy_gradient(&p, &[WeightedTrace { trace: &t, token_adv: &adv }], 1, &Unconstrained).unwrap();
        let mut prefix = t.query_tokens.clone();
        prefix.extend_from_slice(&t.response_tokens[..2]);
        let direct = crate::seqmodel::grad_logprob(&p, &prefix, &t.response_tokens[2..3]).unwrap();
        assert_eq!(g, direct);

        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = crate::seqmodel::active_features(&p, &prefix);
        for _ in 0..20 {
            let r = rows[rng.random_range(0..rows.len())];
            let c = rng.random_range(0..v.len());
            let mut plus = p.clone();
            plus.weights_mut().set(r, c, p.weights().get(r, c) + h);
            let mut minus = p.clone();
            minus.weights_mut().set(r, c, p.weights().get(r, c) - h);
            let tok = &t.response_tokens[2..3];
            let fd = (sequence_logprob(&plus, &prefix, tok).unwrap() - sequence_logprob(&minus, &prefix, tok).unwrap())
                / (2.0 * h);
            let an = g.get(r, c);
            assert!((fd - an).abs() / an.abs().max(1e-8) <= 1e-6);
        }
    }

    #[test]
    fn masked_tokens_are_never_evaluated() {
        let v = Vocabulary::standard(0);
        let p = init_params(&v, 3, 0.5, 3).unwrap();
        let t = trace(&v, "7 S 5 S A 5 .");
        let mut adv = vec![0.4, 0.4, -0.2, -0.2, 0.0, 0.0, 0.0];
        let (g1, l1) =
            accumulate_policy_gradient(&p, &[WeightedTrace { trace: &t, token_adv: &adv }], 2, &Unconstrained).unwrap();
        let mut tampered = t.clone();
        tampered.token_logprobs[4..].fill(f64::NEG_INFINITY);
        let (g2, l2) =
            accumulate_policy_gradient(&p, &[WeightedTrace { trace: &tampered, token_adv: &adv }], 2, &Unconstrained)
                .unwrap();
        assert_eq!((g1, l1), (g2, l2));
        adv.push(1.0);
        assert!(matches!(
            accumulate_policy_gradient(&p, &[WeightedTrace { trace: &t, token_adv: &adv }], 2, &Unconstrained),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn telescoping_identity(r_hat in -3.0f64..3.0, v in prop::collection::vec(-3.0f64..3.0, 1..13)) {
            let g = group_with_rhat(r_hat);
            let mut v_hat = v.clone();
            v_hat.push(0.0);
            let d = compute_deltas(&g, 0, &v_hat, None, 1.0, RewardMode::EveryStep).unwrap();
            let a = gae_advantages(&d, 1.0, 1.0);
            let t_max = v.len() - 1;
            for t in 0..=t_max {
                let expect = (t_max - t + 1) as f64 * r_hat - v_hat[t];
                prop_assert!((a[t] - expect).abs() <= 1e-12);
            }
        }

        #[test]
        fn gamma_zero_collapse(r_hat in -3.0f64..3.0, v in prop::collection::vec(-3.0f64..3.0, 1..8), lambda in 0.0f64..1.0) {
            let g = group_with_rhat(r_hat);
            let mut v_hat = v.clone();
            v_hat.push(0.0);
            let d = compute_deltas(&g, 0, &v_hat, None, 0.0, RewardMode::EveryStep).unwrap();
            let a = gae_advantages(&d, 0.0, lambda);
            for t in 0..v.len() {
                prop_assert_eq!(a[t], r_hat - v_hat[t]);
            }
        }

        #[test]
        fn prune_is_positive_affine_invariant(v in prop::collection::vec(0.0f64..1.0, 1..10), scale in 0.01f64..100.0, shift in -5.0f64..5.0) {
            let w: Vec<f64> = v.iter().map(|x| x * scale + shift).collect();
            prop_assert_eq!(prune_index(&v, true), prune_index(&w, true));
        }

        #[test]
        fn normalized_rewards_are_standardized(r in prop::collection::vec(prop::bool::ANY, 2..64)) {
            let r: Vec<f64> = r.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
            let g = normalize_group_rewards(&r, 0.0).unwrap();
            if g.degenerate {
                prop_assert!(g.r_hat.iter().all(|&x| x == 0.0));
            } else {
                let n = r.len() as f64;
                let m = g.r_hat.iter().sum::<f64>() / n;
                let s = (g.r_hat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() <= 1e-9);
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }
}
