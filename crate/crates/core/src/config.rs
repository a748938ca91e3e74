//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::model::ModelConfig;
use crate::trainer::{Regime, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Seed of the generated suite when `dir` is unset.
    pub seed: u64,
    /// Directory in the layout of `SyntheticSuite::write_to`.
    pub dir: Option<PathBuf>,
    pub max_vocab: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 0, dir: None, max_vocab: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    /// Held-out stories whose middle sentence is infilled.
    pub infill_examples: usize,
    pub rep_prefixes: usize,
    pub continuation_tokens: usize,
    pub rep_n: usize,
    /// Held-out stories used for masked-token accuracy.
    pub masked_examples: usize,
    /// Seed of the fixed masking of the masked-token eval set.
    pub masked_seed: u64,
    pub eval_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            infill_examples: 100,
            rep_prefixes: 100,
            continuation_tokens: 128,
            rep_n: 4,
            masked_examples: 100,
            masked_seed: 0,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// `vocab_size` is replaced by the size of the built vocabulary.
    pub model: ModelConfig,
    /// Causal pretraining used when a command needs a base model and no
    /// checkpoint is given.
    pub pretrain: RunConfig,
    /// The run performed by `train`; adaptation commands use it as the
    /// template for every regime they train.
    pub run: RunConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            model: ModelConfig { max_seq_len: 192, ..ModelConfig::default() },
            pretrain: RunConfig { regime: Regime::PretrainCausal, ..RunConfig::default() },
            run: RunConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a document. A `pretrain` block without a
    /// `regime` key keeps the causal regime.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: serde_json::Value = serde_json::from_str(text)?;
        if let Some(p) = doc.get_mut("pretrain").and_then(|p| p.as_object_mut()) {
            p.entry("regime").or_insert_with(|| Regime::PretrainCausal.as_str().into());
        }
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.run.validate()?;
        if self.pretrain.regime != Regime::PretrainCausal {
            return Err(Error::Config("pretrain.regime must be pretrain_causal".into()));
        }
        for r in [&self.pretrain, &self.run] {
            if r.max_seq_len > self.model.max_seq_len {
                return Err(Error::Config(format!(
                    "training max_seq_len {} exceeds model max_seq_len {}",
                    r.max_seq_len, self.model.max_seq_len
                )));
            }
        }
        let e = &self.eval;
        if e.rep_n == 0 || e.eval_every == 0 || e.infill_examples == 0 || e.masked_examples == 0 || e.rep_prefixes == 0 {
            return Err(Error::Config("eval counts and intervals must be at least 1".into()));
        }
        Ok(())
    }

    /// Sets the training seed of both runs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pretrain.seed = seed;
        self.run.seed = seed;
        self
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
