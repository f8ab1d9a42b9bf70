//! Log-prob dumps: JSONL, one `{"step": int, "entries": [{"token", "logprob"}]}`
//! record per decoding step. A single JSON document of the form
//! `{"prior": [...], "posterior": [...]}` carries both sides of a transition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{step_from_logprobs, LogBase, StepDistribution, TokenEntry};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct DumpError {
    pub line: usize,
    pub message: String,
}

/// One decoding step as stored in a dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: usize,
    pub entries: Vec<TokenEntry>,
}

impl StepRecord {
    /// Converts to a top-k step distribution, interpreting log-probabilities
    /// in `base`.
    pub fn to_step(
        &self,
        k: usize,
        base: LogBase,
    ) -> Result<StepDistribution, crate::distributions::DistributionError> {
        let entries = match base {
            LogBase::E => self.entries.clone(),
            LogBase::Ten => self
                .entries
                .iter()
                .map(|e| TokenEntry::new(e.token(), base.to_natural(e.logprob())))
                .collect::<Result<_, _>>()?,
        };
        step_from_logprobs(&entries, k, self.step)
    }

    /// Inverse of [`StepRecord::to_step`] for natural-log dumps; the
    /// residual is not representable and is dropped.
    pub fn from_step(step: &StepDistribution) -> Self {
        Self {
            step: step.step_index(),
            entries: step
                .entries()
                .iter()
                .map(|(t, p)| TokenEntry::new(t.clone(), p.ln().min(0.0)).expect("valid token"))
                .collect(),
        }
    }
}

/// Parses JSONL step records. Blank lines are skipped.
pub fn parse_dump(text: &str) -> Result<Vec<(usize, StepRecord)>, DumpError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(line).map_err(|e| DumpError {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    if out.is_empty() {
        return Err(DumpError {
            line: 1,
            message: "dump contains no step records".into(),
        });
    }
    Ok(out)
}

/// Parses and converts a JSONL dump into step distributions.
pub fn read_steps(text: &str, k: usize, base: LogBase) -> Result<Vec<StepDistribution>, DumpError> {
    parse_dump(text)?
        .into_iter()
        .map(|(line, record)| {
            record.to_step(k, base).map_err(|e| DumpError {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairedDump {
    prior: Vec<StepRecord>,
    posterior: Vec<StepRecord>,
}

/// Reads a single-document dump holding both prior and posterior records.
/// Errors report the record position within its array as the line.
pub fn read_paired_steps(
    text: &str,
    k: usize,
    base: LogBase,
) -> Result<(Vec<StepDistribution>, Vec<StepDistribution>), DumpError> {
    let paired: PairedDump = serde_json::from_str(text).map_err(|e| DumpError {
        line: e.line(),
        message: e.to_string(),
    })?;
    let convert = |records: Vec<StepRecord>, side: &str| {
        if records.is_empty() {
            return Err(DumpError {
                line: 1,
                message: format!("{side} has no step records"),
            });
        }
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.to_step(k, base).map_err(|e| DumpError {
                    line: i + 1,
                    message: format!("{side}[{i}]: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    Ok((
        convert(paired.prior, "prior")?,
        convert(paired.posterior, "posterior")?,
    ))
}

/// True when the text looks like a single paired JSON document rather than
/// JSONL.
pub fn is_paired(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key("prior")))
        .unwrap_or(false)
}
