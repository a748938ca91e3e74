use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use magnet_lab::config::ExperimentConfig;
use magnet_lab::corpus::{BOS, EOS};
use magnet_lab::eval::{metrics_csv, write_comparison_csv, MetricReport, PplMode, SpanExample};
use magnet_lab::experiments::{self as exp, Dataset};
use magnet_lab::model::checkpoint::Checkpoint;
use magnet_lab::model::{encode_sentence, generate, infill, ModelState};
use magnet_lab::trainer::{Regime, RunConfig};
use magnet_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "magnet-lab", version, about = "Hybrid-attention language model lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct WithBase {
    #[command(flatten)]
    common: Common,
    /// Base model; a causal pretraining run is performed when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct WithInput {
    #[command(flatten)]
    model: WithModel,
    /// Text input, one item per line; held-out corpus items when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured run.
    Train(WithBase),
    /// Greedy continuations of prompts.
    Generate(WithInput),
    /// Fill the gap between `left<TAB>right` contexts.
    Infill {
        #[command(flatten)]
        args: WithInput,
        #[arg(long, default_value_t = 16)]
        span_budget: usize,
    },
    /// Sentence encodings at the last position.
    Embed {
        #[command(flatten)]
        args: WithInput,
        /// Apply the projection head and l2-normalization.
        #[arg(long)]
        project: bool,
    },
    /// Span-restricted perplexity on held-out stories.
    EvalPpl(WithModel),
    /// Rep-n and Rep-Sen of greedy continuations.
    EvalRepetition(WithModel),
    /// Linear probe on the tagging task.
    Probe(WithModel),
    /// Paraphrase similarity and retrieval.
    Similarity(WithModel),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Adapt once per objective combination.
    Ablate(WithBase),
    /// Shifted versus unshifted masked-token training.
    MtpVsMntp(WithBase),
}

struct Ctx {
    cfg: ExperimentConfig,
    data: Dataset,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common, command: &str) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg = cfg.with_seed(s);
        }
        let data = Dataset::prepare(&cfg.corpus)?;
        std::fs::create_dir_all(&c.out)?;
        data.vocab.save(&c.out.join("vocab.txt"))?;
        exp::write_manifest(&c.out, &cfg, command, cfg.run.seed)?;
        Ok(Self { seed: cfg.run.seed, cfg, data, out: c.out.clone() })
    }

    fn load(&self, path: &Path) -> Result<ModelState<f32>> {
        let ck = Checkpoint::load(path)?;
        if ck.vocab_hash != self.data.vocab.hash() {
            return Err(Error::Checkpoint(format!("{} was trained with a different vocabulary", path.display())));
        }
        ck.to_state()
    }

    fn base(&self, checkpoint: Option<&Path>) -> Result<ModelState<f32>> {
        match checkpoint {
            Some(p) => self.load(p),
            None => {
                log::info!("pretraining base model");
                Ok(exp::pretrain(&self.cfg, &self.data, Some(&self.out.join("pretrain")))?.state)
            }
        }
    }

    fn metric(&self, name: &str, value: f64, support: usize) -> Result<MetricReport> {
        MetricReport::new(name, value, support, self.cfg.fingerprint())
    }

    fn write_metrics(&self, checkpoint: &Path, reports: &[MetricReport]) -> Result<()> {
        for r in reports {
            println!("{} = {:.6} (n={})", r.metric, r.value, r.support);
        }
        let text = metrics_csv(reports, &checkpoint.display().to_string(), self.seed);
        std::fs::write(self.out.join("metrics.csv"), text)?;
        Ok(())
    }

    fn exec(&self) -> magnet_lab::par::Execution {
        self.cfg.run.execution
    }

    fn header(&self) -> String {
        format!("# config_fingerprint={}\n", self.cfg.fingerprint())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let lines: Vec<String> =
        std::fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if lines.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no input lines", path.display())));
    }
    Ok(lines)
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train(a) => {
            let ctx = Ctx::new(&a.common, "train")?;
            let r = if ctx.cfg.run.regime == Regime::PretrainCausal {
                let init = match &a.checkpoint {
                    Some(p) => ctx.load(p)?,
                    None => exp::init_model(&ctx.cfg, &ctx.data, ctx.cfg.run.seed)?,
                };
                exp::adapt(&ctx.cfg.run, &ctx.data, &init, Some(&ctx.out), None)?
            } else {
                let base = ctx.base(a.checkpoint.as_deref())?;
                exp::adapt(&ctx.cfg.run, &ctx.data, &base, Some(&ctx.out), None)?
            };
            let last = r.log.last().expect("at least one iteration");
            println!("trained {} iterations, final loss {:.6}", last.iter, last.loss.total);
            if let Some(p) = r.final_checkpoint {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Generate(a) => {
            let ctx = Ctx::new(&a.model.common, "generate")?;
            let state = ctx.load(&a.model.checkpoint)?;
            let prompts = match &a.input {
                Some(p) => read_lines(p)?.iter().map(|l| [vec![BOS], ctx.data.vocab.encode_words(l)].concat()).collect(),
                None => ctx.data.rep_prefixes(ctx.cfg.eval.rep_prefixes)?,
            };
            let mut text = String::new();
            for p in &prompts {
                let budget = ctx.cfg.eval.continuation_tokens.min(state.config.max_seq_len.saturating_sub(p.len()));
                let ids = generate(p, budget, &state)?;
                text.push_str(&ctx.data.vocab.decode(&ids));
                text.push('\n');
            }
            print!("{text}");
            std::fs::write(ctx.out.join("generations.txt"), text)?;
        }
        Command::Infill { args: a, span_budget } => {
            let ctx = Ctx::new(&a.model.common, "infill")?;
            let state = ctx.load(&a.model.checkpoint)?;
            let examples: Vec<(SpanExample, usize)> = match &a.input {
                Some(p) => read_lines(p)?
                    .iter()
                    .map(|l| {
                        let (left, right) = l.split_once('\t').unwrap_or((l.as_str(), ""));
                        let left = [vec![BOS], ctx.data.vocab.encode_words(left)].concat();
                        let right = [ctx.data.vocab.encode_words(right), vec![EOS]].concat();
                        (SpanExample { left, span: Vec::new(), right }, span_budget)
                    })
                    .collect(),
                None => ctx.data.infill_examples(ctx.cfg.eval.infill_examples)?.into_iter().map(|e| {
                    let n = e.span.len();
                    (e, n)
                }).collect(),
            };
            let mut text = String::new();
            for (e, budget) in &examples {
                let ids = infill(&e.left, &e.right, *budget, &state)?;
                text.push_str(&ctx.data.vocab.decode(&ids));
                text.push('\n');
            }
            print!("{text}");
            std::fs::write(ctx.out.join("infills.txt"), text)?;
        }
        Command::Embed { args: a, project } => {
            let ctx = Ctx::new(&a.model.common, "embed")?;
            let state = ctx.load(&a.model.checkpoint)?;
            let sentences = match &a.input {
                Some(p) => read_lines(p)?,
                None => ctx.data.suite.pairs.iter().flat_map(|p| [p.a.clone(), p.b.clone()]).collect(),
            };
            let mut text = ctx.header();
            for s in &sentences {
                let e = encode_sentence(s, &ctx.data.vocab, &state, project)?;
                let cells: Vec<String> = e.iter().map(|x| x.to_string()).collect();
                text.push_str(&format!("{s}\t{}\n", cells.join("\t")));
            }
            std::fs::write(ctx.out.join("embeddings.tsv"), text)?;
            println!("wrote {} encodings", sentences.len());
        }
        Command::EvalPpl(a) => {
            let ctx = Ctx::new(&a.common, "eval-ppl")?;
            let state = ctx.load(&a.checkpoint)?;
            let magnet = exp::infill_ppl(&state, &ctx.data, &ctx.cfg.eval, PplMode::Magnet, ctx.exec())?;
            let causal = exp::infill_ppl(&state, &ctx.data, &ctx.cfg.eval, PplMode::Causal, ctx.exec())?;
            ctx.write_metrics(
                &a.checkpoint,
                &[ctx.metric("span_ppl_magnet", magnet.ppl, magnet.tokens)?, ctx.metric("span_ppl_causal", causal.ppl, causal.tokens)?],
            )?;
        }
        Command::EvalRepetition(a) => {
            let ctx = Ctx::new(&a.common, "eval-repetition")?;
            let state = ctx.load(&a.checkpoint)?;
            let r = exp::repetition(&state, &ctx.data, &ctx.cfg.eval, ctx.exec())?;
            std::fs::write(ctx.out.join("generations.txt"), r.documents.join("\n") + "\n")?;
            let n = ctx.cfg.eval.rep_n;
            ctx.write_metrics(
                &a.checkpoint,
                &[ctx.metric(&format!("rep_{n}"), r.rep_n.value, r.rep_n.used)?, ctx.metric("rep_sen", r.rep_sen, r.documents.len())?],
            )?;
        }
        Command::Probe(a) => {
            let ctx = Ctx::new(&a.common, "probe")?;
            let state = ctx.load(&a.checkpoint)?;
            let r = exp::probe(&state, &ctx.data, &ctx.cfg.eval, ctx.seed, ctx.exec())?;
            ctx.write_metrics(
                &a.checkpoint,
                &[ctx.metric("probe_accuracy", r.accuracy, r.test_size)?, ctx.metric("probe_majority_baseline", r.majority_baseline, r.test_size)?],
            )?;
        }
        Command::Similarity(a) => {
            let ctx = Ctx::new(&a.common, "similarity")?;
            let state = ctx.load(&a.checkpoint)?;
            let r = exp::similarity(&state, &ctx.data, ctx.exec())?;
            let half = r.pairs.div_ceil(2);
            ctx.write_metrics(
                &a.checkpoint,
                &[
                    ctx.metric("mean_cos_paraphrase", r.mean_cos_paraphrase, half)?,
                    ctx.metric("mean_cos_unrelated", r.mean_cos_unrelated, r.pairs - half)?,
                    ctx.metric("retrieval_accuracy", r.retrieval_accuracy, r.queries)?,
                    ctx.metric("spearman", r.spearman, r.pairs)?,
                ],
            )?;
        }
        Command::Gradcheck { seed } => {
            let checks = exp::gradient_checks(seed)?;
            let mut worst = 0.0f64;
            for (name, r) in &checks {
                println!("{name:<32} max_rel_err={:.3e} coords={}", r.max_rel_err, r.coords_checked);
                worst = worst.max(r.max_rel_err);
            }
            println!("max rel err {worst:.3e}");
            return Ok(worst < 1e-4);
        }
        Command::Ablate(a) => {
            let ctx = Ctx::new(&a.common, "ablate")?;
            let base = ctx.base(a.checkpoint.as_deref())?;
            let rows = exp::ablate(&ctx.cfg, &ctx.data, &base, Some(&ctx.out))?;
            exp::write_ablation_csv(&ctx.out.join("ablation.csv"), &rows, &ctx.cfg.fingerprint())?;
            for r in &rows {
                println!("{:<14} probe={:?} retrieval={:?} spearman={:?}", r.objectives, r.probe_accuracy, r.retrieval_accuracy, r.spearman);
            }
        }
        Command::MtpVsMntp(a) => {
            let ctx = Ctx::new(&a.common, "mtp-vs-mntp")?;
            let base = ctx.base(a.checkpoint.as_deref())?;
            let mntp = RunConfig { regime: Regime::AdaptMagnet, ..ctx.cfg.run.clone() };
            let mtp = RunConfig { regime: Regime::AdaptMtpAblation, ..ctx.cfg.run.clone() };
            let eval = ctx.data.masked_eval(&ctx.cfg.eval, &ctx.cfg.run)?;
            let c = magnet_lab::eval::mtp_vs_mntp(
                &mntp,
                &mtp,
                &ctx.data.lm,
                &ctx.data.instruction,
                &base,
                &base,
                &eval,
                ctx.cfg.eval.eval_every,
                Some(&ctx.out),
            )?;
            write_comparison_csv(&ctx.out.join("mtp_vs_mntp.csv"), &c.rows, &ctx.cfg.fingerprint())?;
            for r in &c.rows {
                println!("{} {} {:.4}", r.iter, r.regime.as_str(), r.eval_accuracy);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let threads = std::env::var("MAGNET_LAB_THREADS").ok().and_then(|v| v.parse().ok());
    magnet_lab::par::init_threads(threads);
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
