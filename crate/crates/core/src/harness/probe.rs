use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::seqmodel::{PolicyParams, TokenConstraint, Vocabulary};
use crate::taskgen::Query;
use crate::vvp::{classify_with_traces, probe_step_values, summarize_distribution, DistributionSummary, QueryLabel, StepValueProfile, ValueMode};

/// Classification of one query plus the step values along its greedy CoT trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub query_id: u64,
    pub label: QueryLabel,
    pub direct_correct: u8,
    pub cot_correct: u8,
    pub cot_truncated: bool,
    pub num_steps: usize,
    /// `None` when the CoT response never reached the conclusion marker.
    pub profile: Option<StepValueProfile>,
}

pub fn probe_queries(
    params: &PolicyParams,
    vocab: &Vocabulary,
    queries: &[Query],
    cot_max_len: usize,
    mode: ValueMode,
    constraint: &dyn TokenConstraint,
) -> Result<Vec<ProbeRecord>> {
    queries
        .par_iter()
        .map(|q| {
            let c = classify_with_traces(params, vocab, q, cot_max_len, constraint)?;
            let profile = if c.cot.malformed {
                None
            } else {
                Some(probe_step_values(params, vocab, &c.cot, &q.answer, mode, constraint)?)
            };
            Ok(ProbeRecord {
                query_id: q.id,
                label: c.class.label,
                direct_correct: c.class.direct_correct,
                cot_correct: c.class.cot_correct,
                cot_truncated: c.class.cot_truncated,
                num_steps: c.cot.num_steps(),
                profile,
            })
        })
        .collect()
}

/// Distribution of averaged first central differences per label, skipping
/// labels without any multi-value profile.
pub fn summarize_by_label(records: &[ProbeRecord]) -> Result<Vec<DistributionSummary>> {
    let labels = [QueryLabel::Poisonous, QueryLabel::Beneficial, QueryLabel::BothCorrect, QueryLabel::BothWrong];
    let mut out = Vec::new();
    for label in labels {
        let diffs: Vec<f64> = records
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.profile.as_ref().and_then(|p| p.avg_diff))
            .collect();
        if !diffs.is_empty() {
            out.push(summarize_distribution(&diffs, label.as_str())?);
        }
    }
    Ok(out)
}

/// Writes `profiles.jsonl` and `summary.csv` under `out`.
pub fn write_probe_outputs(records: &[ProbeRecord], out: &Path) -> Result<Vec<DistributionSummary>> {
    std::fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("profiles.jsonl"))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let summaries = summarize_by_label(records)?;
    let mut csv = format!("{}\n", DistributionSummary::CSV_HEADER);
    for s in &summaries {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    std::fs::write(out.join("summary.csv"), csv)?;
    Ok(summaries)
}
