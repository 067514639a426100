use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-update training statistics. Field order is the on-disk order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: usize,
    /// Fraction of sampled rollouts with a correct answer.
    pub accuracy: f64,
    pub mean_response_length: f64,
    /// Mean entropy (nats) of the sampling distribution over every response token of the batch.
    pub mean_token_entropy: f64,
    /// Mean prune index over rollouts that were pruned.
    pub mean_prune_index: Option<f64>,
    pub mean_u_t: f64,
    pub degenerate_group_fraction: f64,
    pub pruned_fraction: f64,
    pub loss: f64,
    pub wall_time: Option<f64>,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("accuracy", Some(self.accuracy)),
            ("mean_response_length", Some(self.mean_response_length)),
            ("mean_token_entropy", Some(self.mean_token_entropy)),
            ("mean_prune_index", self.mean_prune_index),
            ("mean_u_t", Some(self.mean_u_t)),
            ("degenerate_group_fraction", Some(self.degenerate_group_fraction)),
            ("pruned_fraction", Some(self.pruned_fraction)),
            ("loss", Some(self.loss)),
            ("wall_time", self.wall_time),
        ];
        for (name, value) in fields {
            if let Some(x) = value {
                if !x.is_finite() {
                    return Err(Error::Numeric(format!("update {}: {name} is {x}", self.update)));
                }
            }
        }
        for (name, x) in [
            ("accuracy", self.accuracy),
            ("degenerate_group_fraction", self.degenerate_group_fraction),
            ("pruned_fraction", self.pruned_fraction),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Numeric(format!("update {}: {name} = {x} outside [0, 1]", self.update)));
            }
        }
        Ok(())
    }
}

/// Validates `record` and writes it as a single JSON line.
///
/// The line is serialized in full before anything reaches `sink`, so a
/// rejected record leaves the sink untouched.
pub fn log_metrics<W: Write>(record: &MetricsRecord, sink: &mut W) -> Result<()> {
    record.validate()?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    sink.write_all(&line)?;
    sink.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
