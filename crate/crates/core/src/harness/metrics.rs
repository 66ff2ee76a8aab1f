use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::SimilarityStats;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch breakdowns over the epoch.
    #[serde(flatten)]
    pub train: LossBreakdown,
    pub test_top1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_top5: Option<f64>,
    /// Correlation loss between student and teacher on fixed held-out batches.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_cc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epochs: Vec<EpochMetrics>,
    /// Cosine statistics of the final embeddings on the test split.
    pub final_similarity: Option<SimilarityStats>,
}

#[derive(Serialize)]
struct Line<'a> {
    run_id: &'a str,
    #[serde(flatten)]
    epoch: &'a EpochMetrics,
}

#[derive(Deserialize)]
struct OwnedLine {
    run_id: String,
    #[serde(flatten)]
    epoch: EpochMetrics,
}

impl MetricsRecord {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            epochs: Vec::new(),
            final_similarity: None,
        }
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// One JSON object per epoch, newline terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&Line {
                run_id: &self.run_id,
                epoch: e,
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Parses the per-epoch lines of one or more runs, grouped by run id in
    /// order of first appearance.
    pub fn from_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
        let mut out: Vec<MetricsRecord> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: OwnedLine = serde_json::from_str(line)?;
            match out.iter_mut().find(|r| r.run_id == parsed.run_id) {
                Some(r) => r.epochs.push(parsed.epoch),
                None => {
                    let mut r = MetricsRecord::new(parsed.run_id);
                    r.epochs.push(parsed.epoch);
                    out.push(r);
                }
            }
        }
        Ok(out)
    }
}
