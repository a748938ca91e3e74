//! Measurement suite: span-restricted perplexity, repetition, frozen
//! representation probes, sentence similarity and masked-token accuracy.
//!
//! Every metric is a pure function of a read-only model and its inputs.
//! Per-example work may fan out over [`Execution`](crate::par::Execution);
//! aggregation always happens in example order.

mod masked;
mod ppl;
mod probe;
mod repetition;
mod similarity;

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

pub use masked::{
    masked_eval_set, Comparison, masked_token_accuracy, mtp_vs_mntp, write_comparison_csv, ComparisonRow, MaskedEvalSet,
    COMPARISON_HEADER,
};
pub use ppl::{span_nll, span_ppl, PplMode, SpanExample, SpanPpl};
pub use probe::{
    linear_probe, split_train_test, tagging_features, token_representation, word_representation, ProbeConfig,
    ProbeResult,
};
pub use repetition::{rep_n, rep_sen, split_sentences, RepN};
pub use similarity::{cosine, similarity_eval, spearman, SimilarityReport};

/// One named measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Number of items that contributed to `value`.
    pub support: usize,
    pub fingerprint: String,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, support: usize, fingerprint: impl Into<String>) -> Result<Self> {
        let metric = metric.into();
        if support == 0 {
            return Err(Error::InvalidArgument(format!("metric {metric} has no support")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("metric {metric} is not finite: {value}")));
        }
        Ok(Self { metric, value, support, fingerprint: fingerprint.into() })
    }
}

pub const METRICS_HEADER: &str = "metric,value,support,checkpoint,seed";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `metrics.csv` body. Config fingerprints go on leading `#` lines.
pub fn metrics_csv(reports: &[MetricReport], checkpoint: &str, seed: u64) -> String {
    let fingerprints: BTreeSet<&str> = reports.iter().map(|r| r.fingerprint.as_str()).collect();
    let mut out = String::new();
    for fp in fingerprints {
        out.push_str(&format!("# config_fingerprint={fp}\n"));
    }
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&r.metric),
            r.value,
            r.support,
            csv_field(checkpoint),
            seed
        ));
    }
    out
}

pub fn write_metrics(path: &Path, reports: &[MetricReport], checkpoint: &str, seed: u64) -> Result<()> {
    std::fs::write(path, metrics_csv(reports, checkpoint, seed))?;
    Ok(())
}
