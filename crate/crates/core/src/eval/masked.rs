use std::path::Path;

use crate::error::{Error, Result};
use crate::masks::bidirectional_mask;
use crate::model::ModelState;
use crate::numerics::Real;
use crate::objectives::MaskedObjective;
use crate::par::{map_indexed, Execution};
use crate::rng::stream;
use crate::trainer::{train, Regime, RunConfig, TrainOptions};
use crate::views::{apply_masking, MaskingConfig};
use crate::masks::TokenRole;

/// Fixed masked copies of held-out sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedEvalSet {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<Option<u32>>>,
}

impl MaskedEvalSet {
    pub fn num_targets(&self) -> usize {
        self.targets.iter().map(|t| t.iter().flatten().count()).sum()
    }
}

/// Masks every sequence with all positions eligible as context, drawing
/// from the `eval.masking` stream so the set is fixed for a seed.
pub fn masked_eval_set(seqs: &[Vec<u32>], cfg: &MaskingConfig, vocab_size: usize, seed: u64) -> Result<MaskedEvalSet> {
    cfg.validate()?;
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for (i, x) in seqs.iter().enumerate() {
        if x.len() < 3 {
            return Err(Error::InvalidLength(format!("eval sequence {i} is too short to mask")));
        }
        let roles = vec![TokenRole::Context; x.len()];
        let (masked, t) = apply_masking(x, &roles, cfg, vocab_size, &mut stream(seed, "eval.masking", i as u64));
        inputs.push(masked);
        targets.push(t);
    }
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("masked eval set is empty".into()));
    }
    Ok(MaskedEvalSet { inputs, targets })
}

/// Fraction of masked positions whose original token is the argmax of the
/// objective's readout row, under bidirectional attention.
pub fn masked_token_accuracy<T: Real>(
    state: &ModelState<T>,
    set: &MaskedEvalSet,
    objective: MaskedObjective,
    exec: Execution,
) -> Result<(f64, usize)> {
    let parts = map_indexed(exec, &set.inputs, |i, x| -> Result<(usize, usize)> {
        let logits = state.forward(x, &bidirectional_mask(x.len())?)?.logits;
        let (mut hit, mut total) = (0, 0);
        for (l, t) in set.targets[i].iter().enumerate() {
            let (Some(t), Some(r)) = (t, objective.predictor_row(l)) else { continue };
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += usize::from(best == *t as usize);
            total += 1;
        }
        Ok((hit, total))
    });
    let (mut hit, mut total) = (0, 0);
    for p in parts {
        let (h, t) = p?;
        hit += h;
        total += t;
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no masked positions to score".into()));
    }
    Ok((hit as f64 / total as f64, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub iter: usize,
    pub regime: Regime,
    pub eval_accuracy: f64,
}

pub const COMPARISON_HEADER: &str = "iter,regime,eval_accuracy";

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow], fingerprint: &str) -> Result<()> {
    let mut out = format!("# config_fingerprint={fingerprint}\n{COMPARISON_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.iter, r.regime.as_str(), r.eval_accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Accuracy curves of both runs and their final states.
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub mntp: ModelState<f32>,
    pub mtp: ModelState<f32>,
    /// Wall-clock time of each run, evaluations included.
    pub elapsed: [std::time::Duration; 2],
}

/// Trains the shifted and the unshifted masked objectives from the same
/// initial state for the same number of iterations, scoring each on
/// `eval` at iteration 0, every `every` iterations, and at the end. Each
/// run is read out with its own objective's row convention.
#[allow(clippy::too_many_arguments)]
pub fn mtp_vs_mntp(
    mntp_run: &RunConfig,
    mtp_run: &RunConfig,
    data: &[Vec<u32>],
    instruction: &[u32],
    mntp_init: &ModelState<f32>,
    mtp_init: &ModelState<f32>,
    eval: &MaskedEvalSet,
    every: usize,
    out_dir: Option<&Path>,
) -> Result<Comparison> {
    if mntp_init != mtp_init {
        return Err(Error::InvalidArgument("both runs must start from the same checkpoint".into()));
    }
    if mntp_run.regime != Regime::AdaptMagnet || mtp_run.regime != Regime::AdaptMtpAblation {
        return Err(Error::Config("expected adapt_magnet and adapt_mtp_ablation runs".into()));
    }
    if mntp_run.iterations != mtp_run.iterations {
        return Err(Error::Config("both runs must train for the same number of iterations".into()));
    }
    if every == 0 {
        return Err(Error::InvalidArgument("evaluation interval must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut finals = Vec::with_capacity(2);
    let mut elapsed = [std::time::Duration::ZERO; 2];
    for (k, (run, init, sub)) in [(mntp_run, mntp_init, "mntp"), (mtp_run, mtp_init, "mtp")].into_iter().enumerate() {
        let start = std::time::Instant::now();
        let objective = run.regime.objective().masked;
        let (acc0, _) = masked_token_accuracy(init, eval, objective, run.execution)?;
        rows.push(ComparisonRow { iter: 0, regime: run.regime, eval_accuracy: acc0 });
        let total = run.iterations;
        let mut hook = |it: usize, state: &ModelState<f32>| -> Result<()> {
            if it.is_multiple_of(every) || it == total {
                let (acc, _) = masked_token_accuracy(state, eval, objective, run.execution)?;
                rows.push(ComparisonRow { iter: it, regime: run.regime, eval_accuracy: acc });
            }
            Ok(())
        };
        let options = TrainOptions { out_dir: out_dir.map(|d| d.join(sub)), hook: Some(&mut hook), ..Default::default() };
        finals.push(train(run, data, instruction, init.clone(), options)?.state);
        elapsed[k] = start.elapsed();
    }
    let mtp = finals.pop().expect("two runs");
    let mntp = finals.pop().expect("two runs");
    Ok(Comparison { rows, mntp, mtp, elapsed })
}
