//! Training log lines and evaluation reports.

use std::fmt::Write as _;

use aggre_core::{EpochRecord, RankingReport};
use serde::{Deserialize, Serialize};

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mrr: Option<f64>,
    pub val_mr: Option<f64>,
    pub val_hit3: Option<f64>,
    pub wall_seconds: f64,
}

impl LogLine {
    pub fn new(record: &EpochRecord, wall_seconds: f64) -> Self {
        let v = record.validation.as_ref();
        Self {
            epoch: record.epoch,
            mean_loss: record.mean_loss,
            val_mrr: v.map(|m| m.mrr),
            val_mr: v.map(|m| m.mr),
            val_hit3: v.map(|m| m.hit3),
            wall_seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub ranking: String,
    pub ties: String,
    pub context: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mrr: f64,
    pub mr: f64,
    pub hit3: f64,
    /// Hit@K for each requested K, as `(K, value)`.
    pub hits: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLine {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Resolved run configuration, as `key = value` lines.
    pub config: Vec<String>,
    pub checkpoint: String,
    pub split: String,
    pub layers: u32,
    pub mode: ModeFlags,
    pub metrics: Aggregates,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub queries: Option<Vec<QueryLine>>,
}

pub fn aggregates(report: &RankingReport, hits: &[usize]) -> Aggregates {
    let m = &report.metrics;
    Aggregates {
        count: m.count,
        mrr: m.mrr,
        mr: m.mr,
        hit3: m.hit3,
        hits: hits.iter().map(|&k| (k, report.hits_at(k as f64))).collect(),
    }
}

impl EvalReport {
    /// Plain-text MRR / MR / Hit@3 table.
    pub fn table(&self, name: &str) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split: {}  ranking: {}  ties: {}  context: {}  queries: {}",
            self.split, self.mode.ranking, self.mode.ties, self.mode.context, m.count
        );
        let width = name.len().max(5);
        let _ = write!(out, "{:<width$}  {:>7}  {:>7}  {:>7}", "model", "MRR", "MR", "Hit@3");
        for (k, _) in m.hits.iter().filter(|(k, _)| *k != 3) {
            let _ = write!(out, "  {:>7}", format!("Hit@{k}"));
        }
        out.push('\n');
        let _ = write!(out, "{:<width$}  {:>7.3}  {:>7.3}  {:>7.3}", name, m.mrr, m.mr, m.hit3);
        for (_, v) in m.hits.iter().filter(|(k, _)| *k != 3) {
            let _ = write!(out, "  {:>7.3}", v);
        }
        out.push('\n');
        out
    }
}
