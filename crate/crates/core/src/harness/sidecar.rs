//! Offline advantages: traces and step-value profiles in, per-token
//! advantages and gradient masks out. Consecutive blocks of `n` traces form a
//! group; profiles are matched to traces line by line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::advantage::{action_mask, grpo_token_advantages, normalize_group_rewards_with, step_advantages, StdKind};
use crate::error::{Error, Result};
use crate::harness::config::{Method, TrainConfig};
use crate::trace::Trace;
use crate::vvp::StepValueProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub index: usize,
    pub group: usize,
    pub member: usize,
    pub r_hat: f64,
    pub prune_index: Option<usize>,
    pub step_adv: Vec<f64>,
    pub token_adv: Vec<f64>,
    /// Per response token: whether it receives gradient.
    pub grad_mask: Vec<bool>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn sidecar_advantages(
    traces: &[Trace],
    profiles: &[StepValueProfile],
    n: usize,
    cfg: &TrainConfig,
) -> Result<Vec<SidecarRecord>> {
    if n < 2 {
        return Err(Error::GroupSize(n));
    }
    if traces.is_empty() {
        return Err(Error::EmptyInput("traces"));
    }
    if !traces.len().is_multiple_of(n) {
        return Err(Error::Shape(format!("{} traces do not split into groups of {n}", traces.len())));
    }
    if cfg.method == Method::Sspo && profiles.len() != traces.len() {
        return Err(Error::Shape(format!("{} traces but {} profiles", traces.len(), profiles.len())));
    }
    let settings = cfg.advantage_settings();
    let std_kind: StdKind = cfg.std_kind;
    let mut out = Vec::with_capacity(traces.len());
    for (g, group) in traces.chunks(n).enumerate() {
        let r: Vec<f64> = group
            .iter()
            .map(|t| f64::from(t.reward) - cfg.length_penalty * t.len() as f64)
            .collect();
        let rewards = normalize_group_rewards_with(&r, cfg.epsilon, std_kind)?;
        for (j, trace) in group.iter().enumerate() {
            let index = g * n + j;
            let record = if cfg.method == Method::Grpo || trace.malformed {
                let token_adv = grpo_token_advantages(&rewards, j, trace);
                SidecarRecord {
                    index,
                    group: g,
                    member: j,
                    r_hat: rewards.r_hat[j],
                    prune_index: None,
                    step_adv: vec![rewards.r_hat[j]; trace.action_spans().len()],
                    grad_mask: vec![true; token_adv.len()],
                    token_adv,
                }
            } else {
                let table = step_advantages(trace, &rewards, j, &profiles[index].u, &settings)?;
                let spans = trace.action_spans();
                let action = action_mask(spans.len(), table.prune_index, settings.gate);
                let mut grad_mask = vec![false; trace.len()];
                for (span, keep) in spans.into_iter().zip(action) {
                    grad_mask[span].fill(keep);
                }
                SidecarRecord {
                    index,
                    group: g,
                    member: j,
                    r_hat: rewards.r_hat[j],
                    prune_index: table.prune_index,
                    step_adv: table.step_adv,
                    token_adv: table.token_adv,
                    grad_mask,
                }
            };
            out.push(record);
        }
    }
    Ok(out)
}

pub fn sidecar_files(traces: &Path, profiles: Option<&Path>, n: usize, cfg: &TrainConfig, out: &Path) -> Result<usize> {
    let traces: Vec<Trace> = read_jsonl(traces)?;
    let profiles: Vec<StepValueProfile> = match profiles {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let records = sidecar_advantages(&traces, &profiles, n, cfg)?;
    let mut w = BufWriter::new(File::create(out)?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(records.len())
}
