//! Verbal value probing: the value of a partial trace is the policy's own
//! probability of emitting the ground-truth answer right after the
//! conclusion marker, `u_t = π(y | q, s_1 .. s_t, s_c)`.
//!
//! Also hosts the direct-vs-CoT diagnostics: query classification, first
//! central differences of step values and their distribution summaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::prune_index;
use crate::error::{Error, Result};
use crate::seqmodel::{greedy_decode, token_logprobs, PolicyParams, StopRule, TokenConstraint, TokenId, Vocabulary};
use crate::taskgen::Query;
use crate::trace::{assemble_probe_prefix, direct_probe_prefix, segment_response, Trace};

/// How a multi-token answer probability is reduced to a step value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Product of the teacher-forced answer-token probabilities.
    #[default]
    Joint,
    /// Per-token geometric mean of the joint probability.
    GeometricMean,
    /// Probability of the first answer token only.
    FirstToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepValueProfile {
    /// `u_0 ..= u_T`, index 0 being the zero-step probe.
    pub u: Vec<f64>,
    /// Group-normalized values with the terminal zero appended; empty until filled.
    pub v_hat: Vec<f64>,
    pub central_diffs: Vec<f64>,
    pub avg_diff: Option<f64>,
    pub prune_index: Option<usize>,
}

impl StepValueProfile {
    pub fn from_values(u: Vec<f64>) -> Self {
        let (central_diffs, avg_diff) = match first_central_differences(&u) {
            Some((d, avg)) => (d, Some(avg)),
            None => (Vec::new(), None),
        };
        let prune_index = prune_index(&u, false);
        Self { u, v_hat: Vec::new(), central_diffs, avg_diff, prune_index }
    }

    pub fn last_value(&self) -> f64 {
        *self.u.last().expect("profiles hold at least u_0")
    }
}

fn reduce(logprobs: &[f64], mode: ValueMode) -> f64 {
    let value = match mode {
        ValueMode::Joint => logprobs.iter().sum::<f64>().exp(),
        ValueMode::GeometricMean => (logprobs.iter().sum::<f64>() / logprobs.len() as f64).exp(),
        ValueMode::FirstToken => logprobs[0].exp(),
    };
    if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, 1.0)
    }
}

/// Step value of a single probe prefix.
pub fn probe_value(
    params: &PolicyParams,
    prefix: &[TokenId],
    generated_from: usize,
    answer: &[TokenId],
    mode: ValueMode,
    constraint: &dyn TokenConstraint,
) -> Result<f64> {
    let lps = token_logprobs(params, prefix, generated_from, answer, constraint)?;
    Ok(reduce(&lps, mode))
}

/// Runs `T+1` prefill evaluations, one per probe prefix `[q, s_1..s_t, s_c]`.
///
/// An impossible answer token gives `u_t = 0`; EOS after the answer is not scored.
pub fn probe_step_values(
    params: &PolicyParams,
    vocab: &Vocabulary,
    trace: &Trace,
    answer: &[TokenId],
    mode: ValueMode,
    constraint: &dyn TokenConstraint,
) -> Result<StepValueProfile> {
    if answer.is_empty() {
        return Err(Error::EmptyInput("ground-truth answer"));
    }
    let generated_from = trace.query_tokens.len();
    let u = (0..=trace.num_steps())
        .map(|t| {
            let prefix = assemble_probe_prefix(vocab, trace, t)?;
            probe_value(params, &prefix, generated_from, answer, mode, constraint)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepValueProfile::from_values(u))
}

/// Central differences `(u_{t+1} - u_{t-1})/2` inside, one-sided at both ends,
/// and their mean. `None` for fewer than two values.
pub fn first_central_differences(u: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = u.len();
    if n < 2 {
        return None;
    }
    let d: Vec<f64> = (0..n)
        .map(|t| match t {
            0 => u[1] - u[0],
            t if t == n - 1 => u[n - 1] - u[n - 2],
            t => (u[t + 1] - u[t - 1]) / 2.0,
        })
        .collect();
    let avg = d.iter().sum::<f64>() / n as f64;
    Some((d, avg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryLabel {
    /// Direct answer right, chain of thought wrong.
    Poisonous,
    /// Direct answer wrong, chain of thought right.
    Beneficial,
    BothCorrect,
    BothWrong,
}

impl QueryLabel {
    pub fn from_flags(direct_correct: bool, cot_correct: bool) -> Self {
        match (direct_correct, cot_correct) {
            (true, false) => QueryLabel::Poisonous,
            (false, true) => QueryLabel::Beneficial,
            (true, true) => QueryLabel::BothCorrect,
            (false, false) => QueryLabel::BothWrong,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryLabel::Poisonous => "poisonous",
            QueryLabel::Beneficial => "beneficial",
            QueryLabel::BothCorrect => "both_correct",
            QueryLabel::BothWrong => "both_wrong",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryClass {
    pub label: QueryLabel,
    pub direct_correct: u8,
    pub cot_correct: u8,
    /// CoT decoding hit its length limit; counted as incorrect.
    pub cot_truncated: bool,
}

/// Classification plus the two greedy traces it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub class: QueryClass,
    pub direct: Trace,
    pub cot: Trace,
}

/// Greedy direct (`[q, s_c]`) and chain-of-thought (`[q]`) decoding, labelled by correctness.
pub fn classify_with_traces(
    params: &PolicyParams,
    vocab: &Vocabulary,
    query: &Query,
    cot_max_len: usize,
    constraint: &dyn TokenConstraint,
) -> Result<Classification> {
    let q_len = query.tokens.len();
    let direct_prefix = direct_probe_prefix(vocab, query);
    let stop = |max_len| StopRule { eos: vocab.eos(), max_len };

    let gen = greedy_decode(params, &direct_prefix, q_len, stop(cot_max_len), constraint)?;
    let mut response = vec![vocab.concl()];
    response.extend_from_slice(&gen.tokens);
    let mut logprobs = vec![0.0];
    logprobs.extend_from_slice(&gen.logprobs);
    let mut direct = segment_response(vocab, query, &response, &logprobs)?;
    direct.truncated = gen.truncated;
    if gen.truncated {
        direct.reward = 0;
    }

    let gen = greedy_decode(params, &query.tokens, q_len, stop(cot_max_len), constraint)?;
    let mut cot = segment_response(vocab, query, &gen.tokens, &gen.logprobs)?;
    cot.truncated = gen.truncated;
    if gen.truncated {
        cot.reward = 0;
    }

    let class = QueryClass {
        label: QueryLabel::from_flags(direct.reward == 1, cot.reward == 1),
        direct_correct: direct.reward,
        cot_correct: cot.reward,
        cot_truncated: cot.truncated,
    };
    Ok(Classification { class, direct, cot })
}

/// Deterministic: `rng` is accepted for interface symmetry with sampled
/// classification but greedy decoding never draws from it.
pub fn classify_query<R: Rng + ?Sized>(
    params: &PolicyParams,
    vocab: &Vocabulary,
    query: &Query,
    _rng: &mut R,
    cot_max_len: usize,
    constraint: &dyn TokenConstraint,
) -> Result<QueryClass> {
    Ok(classify_with_traces(params, vocab, query, cot_max_len, constraint)?.class)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl DistributionSummary {
    pub const CSV_HEADER: &'static str = "label,count,mean,std,min,q1,median,q3,max";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.label, self.count, self.mean, self.std, self.min, self.q1, self.median, self.q3, self.max
        )
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Count, mean, population std, min, quartiles (linear interpolation) and max.
pub fn summarize_distribution(values: &[f64], label: &str) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::EmptyInput("distribution values"));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in distribution {label:?}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DistributionSummary {
        label: label.to_string(),
        count: values.len(),
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::seqmodel::{init_params, sample_tokens, Unconstrained};
    use crate::taskgen::TaskKind;

    fn vocab16() -> Vocabulary {
        let mut toks: Vec<String> = ["<pad>", "S", "A", "."].map(String::from).to_vec();
        toks.extend((0..10).map(|d| d.to_string()));
        toks.extend(["+", "="].map(String::from));
        Vocabulary::new(toks).unwrap()
    }

    fn query(v: &Vocabulary, q: &str, y: &str) -> Query {
        Query {
            id: 0,
            tokens: v.encode(q).unwrap(),
            answer: v.encode(y).unwrap(),
            reference_steps: vec![],
            kind: TaskKind::ChainArith,
            seed: 0,
        }
    }

    fn trace(v: &Vocabulary, q: &Query, r: &str) -> Trace {
        let toks = v.encode(r).unwrap();
        segment_response(v, q, &toks, &vec![0.0; toks.len()]).unwrap()
    }

    #[test]
    fn uniform_policy_values() {
        let v = vocab16();
        let p = init_params(&v, 4, 0.0, 0).unwrap();
        let q = query(&v, "3 + 4 =", "7");
        let t = trace(&v, &q, "7 S 7 S 9 S A 7 .");
        let prof = probe_step_values(&p, &v, &t, &q.answer, ValueMode::Joint, &Unconstrained).unwrap();
        assert_eq!(prof.u.len(), 4);
        assert!(prof.u.iter().all(|&u| (u - 0.0625).abs() < 1e-15));
        assert_eq!(prof.avg_diff, Some(0.0));
        assert_eq!(prof.prune_index, Some(1));

        let q2 = query(&v, "9 + 9 =", "1 8");
        let t2 = trace(&v, &q2, "1 8 S A 1 8 .");
        let prof = probe_step_values(&p, &v, &t2, &q2.answer, ValueMode::Joint, &Unconstrained).unwrap();
        assert!(prof.u.iter().all(|&u| (u - 0.00390625).abs() < 1e-15));
        let geo = probe_step_values(&p, &v, &t2, &q2.answer, ValueMode::GeometricMean, &Unconstrained).unwrap();
        assert!(geo.u.iter().all(|&u| (u - 0.0625).abs() < 1e-15));
    }

    #[test]
    fn values_depend_only_on_probe_prefix() {
        let v = vocab16();
        let p = init_params(&v, 3, 1.0, 4).unwrap();
        let q = query(&v, "3 + 4 =", "7");
        let a = trace(&v, &q, "2 S 7 S A 7 .");
        let b = trace(&v, &q, "2 S 5 S 1 S A 3 .");
        let pa = probe_step_values(&p, &v, &a, &q.answer, ValueMode::Joint, &Unconstrained).unwrap();
        let pb = probe_step_values(&p, &v, &b, &q.answer, ValueMode::Joint, &Unconstrained).unwrap();
        assert_eq!(pa.u[..2], pb.u[..2]);
    }

    #[test]
    fn monte_carlo_agrees_with_probe() {
        let v = vocab16();
        let p = init_params(&v, 3, 1.5, 9).unwrap();
        let q = query(&v, "3 + 4 =", "7");
        let t = trace(&v, &q, "2 S 7 S A 7 .");
        let prof = probe_step_values(&p, &v, &t, &q.answer, ValueMode::Joint, &Unconstrained).unwrap();
        let prefix = assemble_probe_prefix(&v, &t, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| {
                let g = sample_tokens(&p, &prefix, StopRule { eos: u32::MAX, max_len: 1 }, &mut rng).unwrap();
                g.tokens == q.answer
            })
            .count();
        let u = prof.u[2];
        let sd = (n as f64 * u * (1.0 - u)).sqrt();
        assert!((hits as f64 - n as f64 * u).abs() <= 4.0 * sd, "hits {hits}, expected {}", n as f64 * u);
    }

    #[test]
    fn central_differences() {
        let (d, avg) = first_central_differences(&[0.1, 0.3, 0.2]).unwrap();
        let expect = [0.2, 0.05, -0.1];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((avg - 0.05).abs() < 1e-15);

        let (d, avg) = first_central_differences(&[0.4; 5]).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
        assert_eq!(avg, 0.0);

        let lin: Vec<f64> = (0..6).map(|i| 0.1 + 0.05 * i as f64).collect();
        let (d, avg) = first_central_differences(&lin).unwrap();
        assert!(d.iter().all(|&x| (x - 0.05).abs() < 1e-12));
        assert!((avg - 0.05).abs() < 1e-12);

        assert!(first_central_differences(&[0.3]).is_none());
    }

    #[test]
    fn labels_follow_flags() {
        assert_eq!(QueryLabel::from_flags(true, false), QueryLabel::Poisonous);
        assert_eq!(QueryLabel::from_flags(false, true), QueryLabel::Beneficial);
        assert_eq!(QueryLabel::from_flags(true, true), QueryLabel::BothCorrect);
        assert_eq!(QueryLabel::from_flags(false, false), QueryLabel::BothWrong);
    }

    #[test]
    fn uniform_policy_is_both_wrong() {
        let v = vocab16();
        let p = init_params(&v, 4, 0.0, 0).unwrap();
        let q = query(&v, "3 + 4 =", "7");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = classify_query(&p, &v, &q, &mut rng, 12, &Unconstrained).unwrap();
        assert_eq!(c.label, QueryLabel::BothWrong);
        // uniform argmax emits PAD forever, so CoT decoding truncates
        assert!(c.cot_truncated);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize_distribution(&[1.0, 2.0, 3.0, 4.0], "x").unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max, s.count), (2.5, 2.5, 1.0, 4.0, 4));
        assert_eq!((s.q1, s.q3), (1.75, 3.25));

        let s = summarize_distribution(&[0.7], "c").unwrap();
        assert_eq!((s.mean, s.min, s.q1, s.median, s.q3, s.max, s.std), (0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.0));

        assert!(matches!(summarize_distribution(&[], "e"), Err(Error::EmptyInput(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize_distribution(&xs, "normal").unwrap();
        assert!(s.mean.abs() < 0.05);
        assert!((s.std - 1.0).abs() < 0.05);
    }
}
