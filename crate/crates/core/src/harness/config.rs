use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageSettings, PruneGate, RewardMode, StdKind};
use crate::error::{Error, Result};
use crate::seqmodel::{StopRule, Vocabulary};
use crate::taskgen::TaskSpec;
use crate::trace::ResponseGrammar;
use crate::vvp::ValueMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grpo,
    #[default]
    Sspo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::Sspo => "sspo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_steps: usize,
    pub max_tokens_per_step: usize,
    pub max_answer_tokens: usize,
    pub max_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, max_steps: 8, max_tokens_per_step: 4, max_answer_tokens: 2, max_len: 48 }
    }
}

impl SamplingConfig {
    pub fn grammar(&self, vocab: &Vocabulary) -> Result<ResponseGrammar> {
        ResponseGrammar::digits(vocab, self.max_steps, self.max_tokens_per_step, self.max_answer_tokens)
    }

    pub fn stop(&self, vocab: &Vocabulary) -> StopRule {
        StopRule { eos: vocab.eos(), max_len: self.max_len }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of most recent tokens the policy conditions on.
    pub context_window: usize,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Recall keys in the vocabulary.
    pub num_keys: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { context_window: 6, init_scale: 0.0, num_keys: 10 }
    }
}

impl ModelConfig {
    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::standard(self.num_keys)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub n: usize,
    pub batch_queries: usize,
    pub updates: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub reward_mode: RewardMode,
    pub epsilon: f64,
    pub std_kind: StdKind,
    pub value_mode: ValueMode,
    pub pruning: bool,
    pub use_strict: bool,
    pub prune_gate: PruneGate,
    pub sampling: SamplingConfig,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub seed: u64,
    /// Subtracted per response token from the reward before normalization.
    pub length_penalty: f64,
    /// Held-out queries scored greedily before and after training; 0 disables.
    pub eval_queries: usize,
    /// Log elapsed seconds per update; off by default so metrics stay reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Sspo,
            n: 16,
            batch_queries: 32,
            updates: 300,
            learning_rate: 0.05,
            gamma: 1.0,
            lambda: 0.95,
            reward_mode: RewardMode::EveryStep,
            epsilon: 1e-8,
            std_kind: StdKind::Population,
            value_mode: ValueMode::Joint,
            pruning: true,
            use_strict: false,
            prune_gate: PruneGate::ThroughDecline,
            sampling: SamplingConfig::default(),
            task: TaskSpec::default(),
            model: ModelConfig::default(),
            seed: 0,
            length_penalty: 0.0,
            eval_queries: 200,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n < 2 {
            return Err(Error::GroupSize(self.n));
        }
        if self.batch_queries == 0 {
            return bad("batch_queries must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, x) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("{name} must lie in [0, 1], got {x}"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        if !self.length_penalty.is_finite() {
            return bad("length_penalty must be finite".into());
        }
        let s = &self.sampling;
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", s.temperature));
        }
        if s.max_tokens_per_step == 0 || s.max_answer_tokens == 0 || s.max_len == 0 {
            return bad("sampling limits must be positive".into());
        }
        if self.model.context_window == 0 {
            return bad("context_window must be at least 1".into());
        }
        if !(self.model.init_scale >= 0.0 && self.model.init_scale.is_finite()) {
            return bad(format!("init_scale must be non-negative, got {}", self.model.init_scale));
        }
        self.task.validate()?;
        if let TaskSpec::Recall { table_size, .. } = self.task {
            if table_size > self.model.num_keys {
                return bad(format!("recall table_size {table_size} exceeds num_keys {}", self.model.num_keys));
            }
        }
        Ok(())
    }

    pub fn advantage_settings(&self) -> AdvantageSettings {
        AdvantageSettings {
            gamma: self.gamma,
            lambda: self.lambda,
            reward_mode: self.reward_mode,
            pruning: self.pruning,
            use_strict: self.use_strict,
            gate: self.prune_gate,
        }
    }

    /// Hyperparameters of the original large-model runs, for reference only.
    /// They are far outside what the toy policy can use.
    pub fn llm_scale() -> Self {
        Self {
            n: 16,
            batch_queries: 512,
            learning_rate: 5e-7,
            sampling: SamplingConfig { max_len: 20480, ..SamplingConfig::default() },
            ..Self::default()
        }
    }
}
