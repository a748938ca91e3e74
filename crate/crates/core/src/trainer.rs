//! AdamW optimization loop with the λ-phase schedule, checkpointing and
//! deterministic resume.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, OPT_PREFIX};
use crate::model::{LoraConfig, ModelState};
use crate::numerics::{Real, Tensor};
use crate::objectives::{combined_loss, LossBreakdown, LossConfig, MaskedObjective, ObjectiveSpec};
use crate::par::Execution;
use crate::rng::stream;
use crate::views::{make_view_seeded, SpanConfig, TrainingView, ViewConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Plain next-token training: every example is one span under the
    /// causal special case of the hybrid mask.
    PretrainCausal,
    /// Context masking, spans and the contrastive term, through adapters.
    AdaptMagnet,
    /// As `AdaptMagnet` with unshifted masked-token prediction.
    AdaptMtpAblation,
    /// Bidirectional attention with masked next-token prediction only.
    AdaptBidirOnly,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PretrainCausal => "pretrain_causal",
            Regime::AdaptMagnet => "adapt_magnet",
            Regime::AdaptMtpAblation => "adapt_mtp_ablation",
            Regime::AdaptBidirOnly => "adapt_bidir_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown regime {s:?}")))
    }

    pub fn uses_lora(self) -> bool {
        self != Regime::PretrainCausal
    }

    pub fn view_config(self, base: &ViewConfig) -> ViewConfig {
        match self {
            Regime::PretrainCausal => ViewConfig { spans: SpanConfig::all_span(), no_masking: true, ..base.clone() },
            Regime::AdaptBidirOnly => ViewConfig { spans: SpanConfig::none(), ..base.clone() },
            Regime::AdaptMagnet | Regime::AdaptMtpAblation => base.clone(),
        }
    }

    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        match self {
            Regime::PretrainCausal => LossConfig { phases: LossConfig::constant([0.0, 0.0, 1.0]).phases, ..base.clone() },
            Regime::AdaptBidirOnly => LossConfig { phases: LossConfig::constant([1.0, 0.0, 0.0]).phases, ..base.clone() },
            Regime::AdaptMagnet | Regime::AdaptMtpAblation => base.clone(),
        }
    }

    pub fn objective(self) -> ObjectiveSpec {
        ObjectiveSpec {
            masked: if self == Regime::AdaptMtpAblation { MaskedObjective::Mtp } else { MaskedObjective::Mntp },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Training sequences are truncated to this many tokens.
    pub max_seq_len: usize,
    pub views: ViewConfig,
    pub loss: LossConfig,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub regime: Regime,
    pub lora: LoraConfig,
    pub grad_clip: f64,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 16,
            iterations: 2000,
            lr: 1e-3,
            weight_decay: 0.0,
            max_seq_len: 128,
            views: ViewConfig::default(),
            loss: LossConfig::default(),
            checkpoint_every: 500,
            regime: Regime::AdaptMagnet,
            lora: LoraConfig::default(),
            grad_clip: 1.0,
            execution: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be at least 1".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("lr and weight_decay must be ≥ 0 and grad_clip > 0".into()));
        }
        self.views.validate()?;
        self.loss.validate()?;
        self.lora.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<T: Real> OptimizerState<T> {
    /// Zero moments for the trainable parameters of `state`.
    pub fn new(state: &ModelState<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = |p: usize| state.is_trainable(p).then(|| Tensor::zeros(state.params[p].shape()));
        Self {
            m: (0..state.params.len()).map(zeros).collect(),
            v: (0..state.params.len()).map(zeros).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One AdamW update. Decoupled decay is applied to the parameters before
/// the moment step; parameters without a gradient are left untouched.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    names: &[String],
    opt: &mut OptimizerState<T>,
) -> Result<()> {
    for (g, name) in grads.iter().zip(names) {
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (T::from_f64(opt.beta1), T::from_f64(opt.beta2));
    let c1 = T::from_f64(1.0 - opt.beta1.powi(t));
    let c2 = T::from_f64(1.0 - opt.beta2.powi(t));
    let lr = T::from_f64(opt.lr);
    let decay = T::one() - T::from_f64(opt.lr * opt.weight_decay);
    let eps = T::from_f64(opt.eps);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (Some(m), Some(v)) = (opt.m[i].as_mut(), opt.v[i].as_mut()) else {
            return Err(Error::InvalidArgument(format!("no optimizer slot for {}", names[i])));
        };
        let p = params[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            p[k] *= decay;
            let mk = b1 * m.data()[k] + (T::one() - b1) * gk;
            let vk = b2 * v.data()[k] + (T::one() - b2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            p[k] -= lr * (mk / c1) / ((vk / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their global l2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.sum_squares().to_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One row of `training_log.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iter,loss_mntp,loss_sscl,loss_msg,loss_total,lambda1,lambda2,lambda3,lr";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter, l.mntp, l.sscl, l.msg, l.total, l.lambdas[0], l.lambdas[1], l.lambdas[2], self.lr
        )
    }
}

/// Truncates a framed sequence to `max_len`, keeping the final EOS.
pub fn truncate_seq(x: &[u32], max_len: usize) -> Vec<u32> {
    if x.len() <= max_len {
        return x.to_vec();
    }
    let mut y = x[..max_len - 1].to_vec();
    y.push(x[x.len() - 1]);
    y
}

/// The views of iteration `it` (0-based). Depends only on the seed, the
/// data and `it`, which is what makes resumed runs replay exactly.
pub fn batch_views(
    run: &RunConfig,
    data: &[Vec<u32>],
    it: usize,
    instruction: &[u32],
    vocab_size: usize,
) -> Result<Vec<TrainingView>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let view_cfg = run.regime.view_config(&run.views);
    let mut rng = stream(run.seed, "data", it as u64);
    let picks: Vec<usize> = if run.batch_size <= data.len() {
        sample(&mut rng, data.len(), run.batch_size).into_vec()
    } else {
        (0..run.batch_size).map(|b| b % data.len()).collect()
    };
    picks
        .iter()
        .enumerate()
        .map(|(b, &d)| {
            let x = truncate_seq(&data[d], run.max_seq_len);
            make_view_seeded(&x, &view_cfg, instruction, vocab_size, run.seed, (it * run.batch_size + b) as u64)
        })
        .collect()
}

/// Where to write artifacts and what to resume from.
#[derive(Default)]
pub struct TrainOptions<'h> {
    pub out_dir: Option<PathBuf>,
    pub vocab_hash: [u8; 32],
    /// Called after every iteration with the 1-based iteration count.
    pub hook: Option<&'h mut dyn FnMut(usize, &ModelState<f32>) -> Result<()>>,
}

pub struct TrainResult {
    pub state: ModelState<f32>,
    pub optimizer: OptimizerState<f32>,
    pub log: Vec<LogRow>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Checkpoint holding the model, the optimizer moments, and the iteration.
pub fn training_checkpoint(
    state: &ModelState<f32>,
    opt: &OptimizerState<f32>,
    iteration: usize,
    run: &RunConfig,
    vocab_hash: [u8; 32],
) -> Checkpoint {
    let mut ck = Checkpoint::from_state(state, vocab_hash);
    ck.meta.insert("iteration".into(), iteration.to_string());
    ck.meta.insert("optimizer_step".into(), opt.step.to_string());
    ck.meta.insert("regime".into(), run.regime.as_str().into());
    ck.meta.insert("seed".into(), run.seed.to_string());
    for (i, name) in state.names.iter().enumerate() {
        if let (Some(m), Some(v)) = (&opt.m[i], &opt.v[i]) {
            ck.tensors.push((format!("{OPT_PREFIX}m.{name}"), m.clone()));
            ck.tensors.push((format!("{OPT_PREFIX}v.{name}"), v.clone()));
        }
    }
    ck
}

/// Restores model, optimizer and completed-iteration count.
pub fn resume_state(ck: &Checkpoint, run: &RunConfig) -> Result<(ModelState<f32>, OptimizerState<f32>, usize)> {
    let state = ck.to_state()?;
    let mut opt = OptimizerState::new(&state, run.lr, run.weight_decay);
    let meta = |k: &str| -> Result<u64> {
        ck.meta
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {k}")))
    };
    let iteration = meta("iteration")? as usize;
    opt.step = meta("optimizer_step")?;
    for (i, name) in state.names.iter().enumerate() {
        if opt.m[i].is_some() {
            let get = |kind: &str| {
                ck.tensor(&format!("{OPT_PREFIX}{kind}.{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {name}")))
            };
            opt.m[i] = Some(get("m")?);
            opt.v[i] = Some(get("v")?);
        }
    }
    Ok((state, opt, iteration))
}

fn open_log(dir: &Path, append: bool) -> Result<std::fs::File> {
    let path = dir.join("training_log.csv");
    if append && path.exists() {
        return Ok(OpenOptions::new().append(true).open(path)?);
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{LOG_HEADER}")?;
    Ok(f)
}

/// Runs `run.iterations` iterations from `init` (or continues a resumed
/// `(state, optimizer, completed)` triple). Adapt regimes attach LoRA
/// adapters when `init` has none.
pub fn train(
    run: &RunConfig,
    data: &[Vec<u32>],
    instruction: &[u32],
    init: ModelState<f32>,
    options: TrainOptions<'_>,
) -> Result<TrainResult> {
    let mut state = init;
    if run.regime.uses_lora() && state.config.lora.is_none() {
        state = state.with_lora(run.lora.clone(), &mut stream(run.seed, "init.lora", 0))?;
    }
    let opt = OptimizerState::new(&state, run.lr, run.weight_decay);
    train_from(run, data, instruction, state, opt, 0, options)
}

/// Continues training from a checkpoint written by [`train`].
pub fn resume(
    run: &RunConfig,
    data: &[Vec<u32>],
    instruction: &[u32],
    ck: &Checkpoint,
    options: TrainOptions<'_>,
) -> Result<TrainResult> {
    let (state, opt, done) = resume_state(ck, run)?;
    train_from(run, data, instruction, state, opt, done, options)
}

fn train_from(
    run: &RunConfig,
    data: &[Vec<u32>],
    instruction: &[u32],
    mut state: ModelState<f32>,
    mut opt: OptimizerState<f32>,
    done: usize,
    mut options: TrainOptions<'_>,
) -> Result<TrainResult> {
    run.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let loss_cfg = run.regime.loss_config(&run.loss);
    let spec = run.regime.objective();
    let vocab = state.config.vocab_size;
    let mut log_file = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(open_log(dir, done > 0)?)
        }
        None => None,
    };
    let mut last_good: Option<PathBuf> = None;
    let mut log = Vec::with_capacity(run.iterations.saturating_sub(done));
    for it in done..run.iterations {
        let views = batch_views(run, data, it, instruction, vocab)?;
        let (loss, grads) = combined_loss(&state, &views, &loss_cfg, it, spec, run.execution, true)?;
        if !loss.total.is_finite() {
            return Err(Error::LossNan { iteration: it + 1, last_good });
        }
        let mut grads = grads.expect("gradients requested");
        clip_global_norm(&mut grads, run.grad_clip);
        adamw_step(&mut state.params, &grads, &state.names, &mut opt)?;
        let row = LogRow { iter: it + 1, loss, lr: run.lr };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", row.to_csv())?;
        }
        log.push(row);
        if let Some(hook) = options.hook.as_mut() {
            hook(it + 1, &state)?;
        }
        if let Some(dir) = &options.out_dir {
            if run.checkpoint_every > 0 && (it + 1) % run.checkpoint_every == 0 && it + 1 < run.iterations {
                let path = dir.join(format!("checkpoint_{:06}.bin", it + 1));
                training_checkpoint(&state, &opt, it + 1, run, options.vocab_hash).save(&path)?;
                last_good = Some(path);
            }
        }
    }
    let final_checkpoint = match &options.out_dir {
        Some(dir) => {
            let path = dir.join("final.bin");
            training_checkpoint(&state, &opt, run.iterations, run, options.vocab_hash).save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainResult { state, optimizer: opt, log, final_checkpoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_data() -> Vec<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..40)
            .map(|_| {
                let len = rng.gen_range(8..16);
                let mut x: Vec<u32> = (0..len).map(|i| 5 + ((i * 3 + rng.gen_range(0..2)) % 18) as u32).collect();
                x[0] = crate::corpus::BOS;
                x[len - 1] = crate::corpus::EOS;
                x
            })
            .collect()
    }

    fn small_run(regime: Regime, iterations: usize) -> RunConfig {
        RunConfig {
            batch_size: 4,
            iterations,
            lr: 3e-3,
            max_seq_len: 32,
            regime,
            lora: LoraConfig { r: 2, alpha: 4.0 },
            loss: LossConfig {
                phases: vec![
                    crate::objectives::Phase { start: 0, lambdas: [1.0, 0.0, 1.0] },
                    crate::objectives::Phase { start: 3, lambdas: [1.0, 9.0, 1.0] },
                ],
                ..LossConfig::default()
            },
            checkpoint_every: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn adamw_hand_example() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let names = vec!["w".to_string()];
        let mut opt = OptimizerState { m: vec![Some(Tensor::scalar(0.0))], v: vec![Some(Tensor::scalar(0.0))], step: 0, lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        adamw_step(&mut p, &[Some(Tensor::scalar(0.5))], &names, &mut opt).unwrap();
        let want = -0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].item() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::row_vector(vec![1.0, -2.0])];
        let mut opt = OptimizerState { m: vec![Some(Tensor::zeros(&[1, 2]))], v: vec![Some(Tensor::zeros(&[1, 2]))], step: 0, lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        adamw_step(&mut p, &[Some(Tensor::zeros(&[1, 2]))], &["w".into()], &mut opt).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn decoupled_decay_and_nan_rejection() {
        let mut p = vec![Tensor::<f64>::scalar(2.0)];
        let mut opt = OptimizerState { m: vec![Some(Tensor::scalar(0.0))], v: vec![Some(Tensor::scalar(0.0))], step: 0, lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.5 };
        adamw_step(&mut p, &[Some(Tensor::scalar(0.0))], &["w".into()], &mut opt).unwrap();
        assert!((p[0].item() - 2.0 * 0.95).abs() < 1e-12);
        let err = adamw_step(&mut p, &[Some(Tensor::scalar(f64::NAN))], &["layers.0.wq".into()], &mut opt).unwrap_err();
        assert!(err.to_string().contains("layers.0.wq"));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Some(Tensor::<f64>::row_vector(vec![3.0, 4.0])), None];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n: f64 = g[0].as_ref().unwrap().sum_squares().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_keeps_init() {
        let init = ModelState::<f32>::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let run = RunConfig { lr: 0.0, ..small_run(Regime::PretrainCausal, 1) };
        let r = train(&run, &toy_data(), &[5, 6], init.clone(), TrainOptions::default()).unwrap();
        assert_eq!(r.state.params, init.params);
        assert_eq!(r.log.len(), 1);
    }

    #[test]
    fn phase_switch_logged_once() {
        let init = ModelState::<f32>::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let r = train(&small_run(Regime::AdaptMagnet, 5), &toy_data(), &[5, 6], init, TrainOptions::default()).unwrap();
        let lambdas: Vec<[f64; 3]> = r.log.iter().map(|row| row.loss.lambdas).collect();
        assert_eq!(lambdas[..3], [[1.0, 0.0, 1.0]; 3]);
        assert_eq!(lambdas[3..], [[1.0, 9.0, 1.0]; 2]);
    }

    #[test]
    fn runs_are_deterministic_and_resume_replays() {
        let init = ModelState::<f32>::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let run = small_run(Regime::AdaptMagnet, 5);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let opts = |d: &Path| TrainOptions { out_dir: Some(d.to_path_buf()), ..TrainOptions::default() };
        let ra = train(&run, &toy_data(), &[5, 6], init.clone(), opts(a.path())).unwrap();
        let rb = train(&run, &toy_data(), &[5, 6], init.clone(), opts(b.path())).unwrap();
        let bytes = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(bytes(a.path(), "final.bin"), bytes(b.path(), "final.bin"));
        assert_eq!(bytes(a.path(), "training_log.csv"), bytes(b.path(), "training_log.csv"));

        let ck = Checkpoint::load(&a.path().join("checkpoint_000002.bin")).unwrap();
        let c = tempfile::tempdir().unwrap();
        let rc = resume(&run, &toy_data(), &[5, 6], &ck, opts(c.path())).unwrap();
        assert_eq!(rc.log.iter().map(LogRow::to_csv).collect::<Vec<_>>(), ra.log[2..].iter().map(LogRow::to_csv).collect::<Vec<_>>());
        assert_eq!(bytes(a.path(), "final.bin"), bytes(c.path(), "final.bin"));
        assert_eq!(rb.state, ra.state);
    }

    #[test]
    fn sequential_execution_matches_parallel() {
        let init = ModelState::<f32>::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let run = small_run(Regime::AdaptMagnet, 4);
        let seq = RunConfig { execution: Execution::Sequential, ..run.clone() };
        let a = train(&run, &toy_data(), &[5, 6], init.clone(), TrainOptions::default()).unwrap();
        let b = train(&seq, &toy_data(), &[5, 6], init, TrainOptions::default()).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn regimes_shape_their_views() {
        let data = toy_data();
        for regime in [Regime::PretrainCausal, Regime::AdaptBidirOnly, Regime::AdaptMagnet] {
            let run = small_run(regime, 1);
            let views = batch_views(&run, &data, 0, &[5], 23).unwrap();
            for v in &views {
                v.validate().unwrap();
                match regime {
                    Regime::PretrainCausal => assert!(v.num_masked() == 0 && v.num_span() == v.len() - 1),
                    Regime::AdaptBidirOnly => assert!(v.num_span() == 0 && v.num_masked() > 0),
                    _ => {}
                }
            }
        }
        assert_eq!(Regime::parse("adapt_bidir_only").unwrap(), Regime::AdaptBidirOnly);
        assert!(Regime::parse("nope").is_err());
    }

    #[test]
    fn nan_loss_aborts_with_last_checkpoint() {
        let mut init = ModelState::<f32>::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let run = small_run(Regime::PretrainCausal, 4);
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions { out_dir: Some(dir.path().to_path_buf()), ..TrainOptions::default() };
        let emb = init.layout.tok_emb;
        init.params[emb].data_mut().iter_mut().for_each(|x| *x = f32::NAN);
        match train(&run, &toy_data(), &[5, 6], init, opts) {
            Err(Error::LossNan { iteration: 1, last_good: None }) => {}
            other => panic!("unexpected {:?}", other.map(|r| r.log.len())),
        }
    }
}
