//! End-to-end pipelines shared by the command-line tool and the
//! acceptance harness: data preparation, pretraining, adaptation, the
//! standard evaluations, the objective ablation grid and the gradient
//! check suite.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{CorpusConfig, EvalConfig, ExperimentConfig};
use crate::corpus::{make_synthetic_suite, SyntheticSuite, Vocab, BOS, EOS, INSTRUCTION};
use crate::error::{Error, Result};
use crate::eval::{
    linear_probe, masked_eval_set, rep_n, rep_sen, similarity_eval, span_ppl, split_sentences, split_train_test,
    tagging_features, MaskedEvalSet, PplMode, ProbeResult, RepN, SimilarityReport, SpanExample, SpanPpl,
};
use crate::model::{generate_continuation, ModelConfig, ModelState};
use crate::numerics::{check_tape_fn, primitive_suite, GradCheckReport, Tensor, DEFAULT_EPS};
use crate::objectives::{
    check_combined_gradients, masked_pairs, pairs_ce_on_tape, span_pairs, sscl_on_tape, LossConfig, MaskedObjective,
    ObjectiveSpec, Phase,
};
use crate::par::{map_indexed, Execution};
use crate::rng::stream;
use crate::trainer::{train, RunConfig, TrainOptions, TrainResult};
use crate::views::{make_view_seeded, ViewConfig};

/// A tokenized synthetic suite.
pub struct Dataset {
    pub suite: SyntheticSuite,
    pub vocab: Vocab,
    /// `[BOS] doc [EOS]` ids of every language-modeling document.
    pub lm: Vec<Vec<u32>>,
    pub instruction: Vec<u32>,
}

impl Dataset {
    /// Generates (or reads) the suite and builds the vocabulary from the
    /// language-modeling documents plus the encoding instruction.
    pub fn prepare(cfg: &CorpusConfig) -> Result<Self> {
        let suite = match &cfg.dir {
            Some(dir) => SyntheticSuite::read_from(dir)?,
            None => make_synthetic_suite(cfg.seed),
        };
        Self::from_suite(suite, cfg.max_vocab)
    }

    pub fn from_suite(suite: SyntheticSuite, max_vocab: usize) -> Result<Self> {
        if suite.lm_corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocab = Vocab::build(suite.lm_corpus.iter().map(String::as_str).chain([INSTRUCTION]), max_vocab)?;
        let lm = suite.lm_corpus.iter().map(|d| vocab.encode(d).ids).collect();
        let instruction = vocab.instruction_ids();
        Ok(Self { suite, vocab, lm, instruction })
    }

    /// Middle sentence of each of the first `n` held-out stories, with
    /// the two sentences on either side as context.
    pub fn infill_examples(&self, n: usize) -> Result<Vec<SpanExample>> {
        let stories = self.stories(0, n)?;
        Ok(stories
            .iter()
            .map(|s| {
                let enc = |sentences: &[String]| self.vocab.encode_words(&sentences.join(" "));
                let mut left = vec![BOS];
                left.extend(enc(&s.sentences[..2]));
                let mut right = enc(&s.sentences[3..]);
                right.push(EOS);
                SpanExample { left, span: enc(&s.sentences[2..3]), right }
            })
            .collect())
    }

    /// `[BOS]` plus the first sentence of each of the last `n` stories.
    pub fn rep_prefixes(&self, n: usize) -> Result<Vec<Vec<u32>>> {
        let total = self.suite.stories.len();
        let stories = self.stories(total.saturating_sub(n), n)?;
        Ok(stories
            .iter()
            .map(|s| {
                let mut p = vec![BOS];
                p.extend(self.vocab.encode_words(&s.sentences[0]));
                p
            })
            .collect())
    }

    /// Full `[BOS] story [EOS]` sequences of the first `n` stories.
    pub fn story_sequences(&self, n: usize) -> Result<Vec<Vec<u32>>> {
        Ok(self.stories(0, n)?.iter().map(|s| self.vocab.encode(&s.text()).ids).collect())
    }

    fn stories(&self, start: usize, n: usize) -> Result<&[crate::corpus::Story]> {
        let all = &self.suite.stories;
        if n == 0 || start + n > all.len() {
            return Err(Error::InvalidArgument(format!(
                "asked for stories {start}..{} of {}",
                start + n,
                all.len()
            )));
        }
        let picked = &all[start..start + n];
        if picked.iter().any(|s| s.sentences.len() < 5) {
            return Err(Error::InvalidArgument("held-out stories need five sentences".into()));
        }
        Ok(picked)
    }

    pub fn masked_eval(&self, eval: &EvalConfig, run: &RunConfig) -> Result<MaskedEvalSet> {
        let seqs = self.story_sequences(eval.masked_examples)?;
        masked_eval_set(&seqs, &run.views.masking, self.vocab.len(), eval.masked_seed)
    }
}

/// The configured model with its vocabulary size set to the dataset's.
pub fn model_config(cfg: &ExperimentConfig, data: &Dataset) -> ModelConfig {
    ModelConfig { vocab_size: data.vocab.len(), ..cfg.model.clone() }
}

pub fn init_model(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<ModelState<f32>> {
    ModelState::init(model_config(cfg, data), &mut stream(seed, "init.model", 0))
}

/// Causal pretraining from a fresh initialization.
pub fn pretrain(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainResult> {
    let init = init_model(cfg, data, cfg.pretrain.seed)?;
    let options = TrainOptions { out_dir: out.map(Path::to_path_buf), vocab_hash: data.vocab.hash(), hook: None };
    train(&cfg.pretrain, &data.lm, &data.instruction, init, options)
}

/// Trains `run` from `base`.
pub fn adapt(
    run: &RunConfig,
    data: &Dataset,
    base: &ModelState<f32>,
    out: Option<&Path>,
    hook: Option<&mut dyn FnMut(usize, &ModelState<f32>) -> Result<()>>,
) -> Result<TrainResult> {
    let options = TrainOptions { out_dir: out.map(Path::to_path_buf), vocab_hash: data.vocab.hash(), hook };
    train(run, &data.lm, &data.instruction, base.clone(), options)
}

pub fn infill_ppl(state: &ModelState<f32>, data: &Dataset, eval: &EvalConfig, mode: PplMode, exec: Execution) -> Result<SpanPpl> {
    span_ppl(state, &data.infill_examples(eval.infill_examples)?, mode, exec)
}

/// Greedy continuations of every prefix, `length` tokens each.
pub fn continuations(state: &ModelState<f32>, prefixes: &[Vec<u32>], length: usize, exec: Execution) -> Result<Vec<Vec<u32>>> {
    map_indexed(exec, prefixes, |_, p| generate_continuation(p, length, state)).into_iter().collect()
}

pub struct RepetitionReport {
    pub rep_n: RepN,
    pub rep_sen: f64,
    /// Decoded continuations, one document each.
    pub documents: Vec<String>,
}

pub fn repetition(state: &ModelState<f32>, data: &Dataset, eval: &EvalConfig, exec: Execution) -> Result<RepetitionReport> {
    let prefixes = data.rep_prefixes(eval.rep_prefixes)?;
    let streams = continuations(state, &prefixes, eval.continuation_tokens, exec)?;
    let documents: Vec<String> = streams.iter().map(|s| data.vocab.decode(s)).collect();
    Ok(RepetitionReport { rep_n: rep_n(&streams, eval.rep_n)?, rep_sen: rep_sen(&documents, split_sentences)?, documents })
}

pub fn probe(state: &ModelState<f32>, data: &Dataset, eval: &EvalConfig, seed: u64, exec: Execution) -> Result<ProbeResult> {
    let (xs, ys, owner) = tagging_features(state, &data.suite.tagging, &data.vocab, exec)?;
    let is_test = split_train_test(&owner, eval.probe.test_fraction);
    linear_probe(&xs, &ys, &is_test, &eval.probe, seed)
}

pub fn similarity(state: &ModelState<f32>, data: &Dataset, exec: Execution) -> Result<SimilarityReport> {
    similarity_eval(state, &data.suite.pairs, &data.vocab, exec)
}

/// Objective combinations in the order of the ablation table.
pub const ABLATION_GRID: [(&str, [f64; 3]); 5] = [
    ("MNTP", [1.0, 0.0, 0.0]),
    ("SSCL", [0.0, 1.0, 0.0]),
    ("MNTP+MSG", [1.0, 0.0, 1.0]),
    ("SSCL+MSG", [0.0, 1.0, 1.0]),
    ("MNTP+SSCL+MSG", [1.0, 1.0, 1.0]),
];

/// Restricts a phase schedule to the terms switched on in `combo`.
/// Phases left with no active term are dropped and the earliest
/// remaining phase is moved to iteration 0.
pub fn ablation_schedule(base: &LossConfig, combo: [f64; 3]) -> Result<LossConfig> {
    let mut phases: Vec<Phase> = base
        .phases
        .iter()
        .map(|p| Phase { start: p.start, lambdas: [0, 1, 2].map(|k| p.lambdas[k] * combo[k]) })
        .filter(|p| p.lambdas.iter().any(|&l| l != 0.0))
        .collect();
    match phases.first_mut() {
        Some(first) => first.start = 0,
        None => return Err(Error::Config(format!("objective combination {combo:?} leaves no active term"))),
    }
    let cfg = LossConfig { phases, ..base.clone() };
    cfg.validate()?;
    Ok(cfg)
}

/// One row of the ablation table. Word-level scores are filled for
/// combinations that train the masked objective, sentence-level scores
/// for those that train the contrastive one.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub objectives: String,
    pub lambdas: [f64; 3],
    pub probe_accuracy: Option<f64>,
    pub retrieval_accuracy: Option<f64>,
    pub spearman: Option<f64>,
}

pub const ABLATION_HEADER: &str = "objectives,lambda1,lambda2,lambda3,probe_accuracy,retrieval_accuracy,spearman";

/// Adapts `base` once per objective combination and scores each result.
pub fn ablate(cfg: &ExperimentConfig, data: &Dataset, base: &ModelState<f32>, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (name, combo) in ABLATION_GRID {
        let run = RunConfig { loss: ablation_schedule(&cfg.run.loss, combo)?, ..cfg.run.clone() };
        let sub = out.map(|d| d.join(name.to_lowercase().replace('+', "_")));
        log::info!("ablation {name}");
        let state = adapt(&run, data, base, sub.as_deref(), None)?.state;
        let exec = run.execution;
        let probe_accuracy = if combo[0] != 0.0 { Some(probe(&state, data, &cfg.eval, run.seed, exec)?.accuracy) } else { None };
        let sim = if combo[1] != 0.0 { Some(similarity(&state, data, exec)?) } else { None };
        rows.push(AblationRow {
            objectives: name.to_string(),
            lambdas: combo,
            probe_accuracy,
            retrieval_accuracy: sim.map(|s| s.retrieval_accuracy),
            spearman: sim.map(|s| s.spearman),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow], fingerprint: &str) -> Result<()> {
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = format!("# config_fingerprint={fingerprint}\n{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.objectives,
            r.lambdas[0],
            r.lambdas[1],
            r.lambdas[2],
            cell(r.probe_accuracy),
            cell(r.retrieval_accuracy),
            cell(r.spearman)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// The small f64 model used by the gradient check suite.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig { vocab_size: 23, d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, max_seq_len: 32, ..ModelConfig::default() }
}

/// Central finite-difference checks of every tape primitive, each loss
/// function on random logits or encodings, and the combined loss through
/// the full model for each single-term weighting and the default
/// schedule, with and without adapters.
pub fn gradient_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out: Vec<(String, GradCheckReport)> =
        primitive_suite(seed)?.into_iter().map(|(n, r)| (format!("primitive.{n}"), r)).collect();

    let mut rng = stream(seed, "gradcheck", 0);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut random = |r: usize, c: usize| Tensor::<f64>::from_fn(r, c, |_, _| normal.sample(&mut rng));
    let logits = random(7, 9);
    let targets = [None, Some(3), None, Some(0), Some(8), None, Some(2)];
    for (name, obj) in [("loss_mntp", MaskedObjective::Mntp), ("loss_mtp", MaskedObjective::Mtp)] {
        let pairs = masked_pairs(&targets, obj)?;
        let r = check_tape_fn(
            std::slice::from_ref(&logits),
            |t, v| Ok(pairs_ce_on_tape(t, v[0], &pairs, 1.0 / 7.0)?.expect("non-empty")),
            DEFAULT_EPS,
            None,
        )?;
        out.push((name.into(), r));
    }
    let pairs = span_pairs(&[None, None, Some(4), Some(1), None, Some(6), None])?;
    let r = check_tape_fn(
        &[logits],
        |t, v| Ok(pairs_ce_on_tape(t, v[0], &pairs, 1.0 / 7.0)?.expect("non-empty")),
        DEFAULT_EPS,
        None,
    )?;
    out.push(("loss_msg".into(), r));
    let (e, ep) = (random(4, 6), random(4, 6));
    let r = check_tape_fn(
        &[e, ep],
        |t, v| {
            let a = t.l2_normalize(v[0]);
            let b = t.l2_normalize(v[1]);
            sscl_on_tape(t, a, b, 0.1)
        },
        DEFAULT_EPS,
        None,
    )?;
    out.push(("loss_sscl".into(), r));

    let cfg = gradcheck_model_config();
    let vocab = cfg.vocab_size;
    let model = ModelState::<f64>::init(cfg, &mut stream(seed, "gradcheck", 1))?;
    let mut adapted = model.with_lora(crate::model::LoraConfig { r: 2, alpha: 4.0 }, &mut stream(seed, "gradcheck", 2))?;
    // Fresh adapters have B = 0, which zeroes the gradient reaching A.
    let mut rng = stream(seed, "gradcheck", 3);
    for (i, name) in adapted.names.clone().iter().enumerate() {
        if name.ends_with("lora_b") {
            let (r, c) = (adapted.params[i].rows(), adapted.params[i].cols());
            adapted.params[i] = Tensor::from_fn(r, c, |_, _| 0.1 * normal.sample(&mut rng));
        }
    }
    let mut rng = stream(seed, "gradcheck", 4);
    let views = (0..3)
        .map(|i| {
            use rand::Rng;
            let len = rng.gen_range(8..14);
            let mut x: Vec<u32> = (0..len).map(|_| rng.gen_range(5..vocab as u32)).collect();
            x[0] = BOS;
            x[len - 1] = EOS;
            make_view_seeded(&x, &ViewConfig::default(), &[5, 6], vocab, seed, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let schedules = [
        ("mntp", LossConfig::constant([1.0, 0.0, 0.0])),
        ("sscl", LossConfig::constant([0.0, 1.0, 0.0])),
        ("msg", LossConfig::constant([0.0, 0.0, 1.0])),
        ("default", LossConfig::default()),
    ];
    for (state, tag) in [(&model, "full"), (&adapted, "lora")] {
        for (name, loss) in &schedules {
            let r = check_combined_gradients(state, &views, loss, 5000, ObjectiveSpec::default(), 6)?;
            out.push((format!("combined_loss.{tag}.{name}"), r));
        }
        let mtp = ObjectiveSpec { masked: MaskedObjective::Mtp };
        let r = check_combined_gradients(state, &views, &LossConfig::default(), 5000, mtp, 6)?;
        out.push((format!("combined_loss.{tag}.mtp"), r));
    }
    Ok(out)
}

/// Records what produced a directory of artifacts.
pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig, command: &str, seed: u64) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        seed: u64,
        config_fingerprint: String,
        config: &'a ExperimentConfig,
    }
    std::fs::create_dir_all(dir)?;
    let m = Manifest { command, seed, config_fingerprint: cfg.fingerprint(), config: cfg };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}
