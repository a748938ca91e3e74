//! Training objectives: masked next-token prediction (and its unshifted
//! ablation), in-batch contrastive encoding, and missing-span generation,
//! combined under a phased λ schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{magnet_mask, TokenRole};
use crate::model::{ModelState, ParamVars};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::par::{map_indexed, Execution};
use crate::views::TrainingView;

/// λ weights from `start` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub start: usize,
    pub lambdas: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub phases: Vec<Phase>,
    pub tau: f64,
    /// Divide by the number of contributing tokens instead of by `L`.
    pub normalize_by_count: bool,
}

/// Iteration at which the contrastive weight switches on: the 3400/4200
/// split of the reference schedule applied to a 2000-iteration run.
pub const DEFAULT_PHASE_SWITCH: usize = 1620;

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            phases: vec![
                Phase { start: 0, lambdas: [1.0, 0.0, 1.0] },
                Phase { start: DEFAULT_PHASE_SWITCH, lambdas: [1.0, 9.0, 1.0] },
            ],
            tau: 0.1,
            normalize_by_count: false,
        }
    }
}

impl LossConfig {
    pub fn constant(lambdas: [f64; 3]) -> Self {
        Self { phases: vec![Phase { start: 0, lambdas }], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        let first = self.phases.first().ok_or_else(|| Error::Config("no loss phases".into()))?;
        if first.start != 0 {
            return Err(Error::Config("the first loss phase must start at iteration 0".into()));
        }
        for w in self.phases.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::Config("loss phase thresholds must ascend".into()));
            }
        }
        for p in &self.phases {
            if p.lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) || p.lambdas.iter().all(|&l| l == 0.0) {
                return Err(Error::Config(format!("phase at {} needs non-negative weights, one positive", p.start)));
            }
        }
        Ok(())
    }

    pub fn lambdas_at(&self, iteration: usize) -> [f64; 3] {
        self.phases
            .iter()
            .rev()
            .find(|p| p.start <= iteration)
            .map_or([0.0; 3], |p| p.lambdas)
    }

    /// True when some phase weights the contrastive term.
    pub fn uses_sscl(&self) -> bool {
        self.phases.iter().any(|p| p.lambdas[1] > 0.0)
    }
}

/// Which position predicts a masked token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedObjective {
    /// Row `l−1` predicts the token at `l`.
    #[default]
    Mntp,
    /// Row `l` predicts the token at `l`.
    Mtp,
}

impl MaskedObjective {
    pub fn predictor_row(self, l: usize) -> Option<usize> {
        match self {
            MaskedObjective::Mntp => l.checked_sub(1),
            MaskedObjective::Mtp => Some(l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mntp: f64,
    pub sscl: f64,
    pub msg: f64,
    pub total: f64,
    pub lambdas: [f64; 3],
    pub n_masked: usize,
    pub n_span: usize,
    pub n_pairs: usize,
}

/// `(predictor row, target id)` for every masked position.
pub fn masked_pairs(targets: &[Option<u32>], objective: MaskedObjective) -> Result<Vec<(usize, usize)>> {
    targets
        .iter()
        .enumerate()
        .filter_map(|(l, t)| t.map(|t| (l, t)))
        .map(|(l, t)| {
            objective
                .predictor_row(l)
                .map(|r| (r, t as usize))
                .ok_or_else(|| Error::InvalidArgument("masked target at position 0 has no predictor".into()))
        })
        .collect()
}

/// `(row l−1, target id)` for every span position `l`.
pub fn span_pairs(span_target: &[Option<u32>]) -> Result<Vec<(usize, usize)>> {
    span_target
        .iter()
        .enumerate()
        .filter_map(|(l, t)| t.map(|t| (l, t)))
        .map(|(l, t)| {
            l.checked_sub(1)
                .map(|r| (r, t as usize))
                .ok_or_else(|| Error::MalformedSpans("span at position 0 has no predictor".into()))
        })
        .collect()
}

/// `scale · Σ −log softmax(logits[row])[target]`, or `None` when `pairs`
/// is empty.
pub fn pairs_ce_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    pairs: &[(usize, usize)],
    scale: T,
) -> Result<Option<Var>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let targets: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let picked = tape.gather_rows(logits, &rows)?;
    let ce = tape.cross_entropy_rows(picked, &targets)?;
    Ok(Some(tape.scale(ce, scale)))
}

fn check_targets(logits: &Tensor<impl Real>, targets: &[Option<u32>]) -> Result<()> {
    if targets.len() != logits.rows() {
        return Err(Error::ShapeMismatch { op: "loss targets", left: logits.shape().to_vec(), right: vec![targets.len()] });
    }
    Ok(())
}

fn pairs_ce<T: Real>(logits: &Tensor<T>, pairs: &[(usize, usize)], scale: T) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.param(logits, false);
    Ok(pairs_ce_on_tape(&mut tape, l, pairs, scale)?.map_or(T::zero(), |v| tape.value(v).item()))
}

/// Masked next-token loss of one sequence: cross-entropy of row `l−1`
/// against the original token at each masked `l`, summed and divided by
/// `L = logits.rows()`.
pub fn loss_mntp<T: Real>(logits: &Tensor<T>, mntp_target: &[Option<u32>]) -> Result<T> {
    check_targets(logits, mntp_target)?;
    let pairs = masked_pairs(mntp_target, MaskedObjective::Mntp)?;
    pairs_ce(logits, &pairs, T::one() / T::from_f64(logits.rows() as f64))
}

/// Unshifted ablation: row `l` predicts the token at `l`.
pub fn loss_mtp<T: Real>(logits: &Tensor<T>, mntp_target: &[Option<u32>]) -> Result<T> {
    check_targets(logits, mntp_target)?;
    let pairs = masked_pairs(mntp_target, MaskedObjective::Mtp)?;
    pairs_ce(logits, &pairs, T::one() / T::from_f64(logits.rows() as f64))
}

/// Missing-span loss of one sequence: row `l−1` predicts each span token
/// `l`, summed and divided by `L`.
pub fn loss_msg<T: Real>(logits: &Tensor<T>, span_target: &[Option<u32>], roles: &[TokenRole]) -> Result<T> {
    check_targets(logits, span_target)?;
    if roles.len() != span_target.len() || roles.iter().zip(span_target).any(|(r, t)| r.is_span() != t.is_some()) {
        return Err(Error::MalformedSpans("span targets must sit exactly on span positions".into()));
    }
    let pairs = span_pairs(span_target)?;
    pairs_ce(logits, &pairs, T::one() / T::from_f64(logits.rows() as f64))
}

/// InfoNCE over `N×d` encodings with in-batch negatives; the denominator
/// runs over every `j`, including `j = i`.
pub fn sscl_on_tape<T: Real>(tape: &mut Tape<'_, T>, e: Var, e_plus: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let n = tape.value(e).rows();
    let ept = tape.transpose(e_plus);
    let sim = tape.matmul(e, ept)?;
    let sim = tape.scale(sim, T::from_f64(1.0 / tau));
    let targets: Vec<usize> = (0..n).collect();
    let ce = tape.cross_entropy_rows(sim, &targets)?;
    Ok(tape.scale(ce, T::from_f64(1.0 / n as f64)))
}

pub fn loss_sscl<T: Real>(e: &Tensor<T>, e_plus: &Tensor<T>, tau: f64) -> Result<T> {
    if e.shape() != e_plus.shape() || e.rows() == 0 {
        return Err(Error::ShapeMismatch { op: "loss_sscl", left: e.shape().to_vec(), right: e_plus.shape().to_vec() });
    }
    let mut tape = Tape::new();
    let (a, b) = (tape.param(e, false), tape.param(e_plus, false));
    let v = sscl_on_tape(&mut tape, a, b, tau)?;
    Ok(tape.value(v).item())
}

/// What a training regime optimizes beyond the λ weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObjectiveSpec {
    pub masked: MaskedObjective,
}

/// One example's forward passes, kept alive until its backward pass.
struct ExampleTape<'a, T: Real> {
    tape: Tape<'a, T>,
    pv: ParamVars,
    lm: Option<Var>,
    e: Option<Var>,
    e_plus: Option<Var>,
    mntp: f64,
    msg: f64,
    n_masked: usize,
    n_span: usize,
}

fn last_row_projected<'a, T: Real>(
    state: &'a ModelState<T>,
    tape: &mut Tape<'a, T>,
    pv: &ParamVars,
    tokens: &[u32],
) -> Result<Var> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let mask = crate::masks::bidirectional_mask(tokens.len())?;
    let h = state.hidden_on_tape(tape, pv, tokens, &positions, &mask)?;
    let last = tape.slice_rows(h, tokens.len() - 1, tokens.len())?;
    state.project_on_tape(tape, pv, last)
}

#[allow(clippy::too_many_arguments)]
fn example_tape<'a, T: Real>(
    state: &'a ModelState<T>,
    view: &TrainingView,
    cfg: &LossConfig,
    spec: ObjectiveSpec,
    lambdas: [f64; 3],
    n_examples: usize,
    with_sscl: bool,
    track_grads: bool,
) -> Result<ExampleTape<'a, T>> {
    let mut tape = Tape::new();
    let pv = state.register(&mut tape, track_grads);
    let len = view.x_masked.len();
    let positions: Vec<usize> = (0..len).collect();
    let mask = magnet_mask(&view.roles)?;
    let h = state.hidden_on_tape(&mut tape, &pv, &view.x_masked, &positions, &mask)?;

    let masked = masked_pairs(&view.mntp_target, spec.masked)?;
    let spans = span_pairs(&view.span_target)?;
    let norm = |count: usize| {
        let denom = if cfg.normalize_by_count { count.max(1) } else { len };
        T::from_f64(1.0 / (n_examples * denom) as f64)
    };
    let mut lm_terms = Vec::new();
    let mut values = [0.0f64; 2];
    for (k, (pairs, lambda)) in [(&masked, lambdas[0]), (&spans, lambdas[2])].into_iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let targets: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let hr = tape.gather_rows(h, &rows)?;
        let logits = state.logits_on_tape(&mut tape, &pv, hr)?;
        let ce = tape.cross_entropy_rows(logits, &targets)?;
        let loss = tape.scale(ce, norm(pairs.len()));
        values[k] = tape.value(loss).item().to_f64();
        if lambda != 0.0 {
            lm_terms.push(tape.scale(loss, T::from_f64(lambda)));
        }
    }
    let lm = match lm_terms.as_slice() {
        [] => None,
        [a] => Some(*a),
        [a, b] => Some(tape.add(*a, *b)?),
        _ => unreachable!(),
    };
    let (e, e_plus) = if with_sscl {
        (
            Some(last_row_projected(state, &mut tape, &pv, &view.x_instr)?),
            Some(last_row_projected(state, &mut tape, &pv, &view.x_plus_instr)?),
        )
    } else {
        (None, None)
    };
    Ok(ExampleTape {
        tape,
        pv,
        lm,
        e,
        e_plus,
        mntp: values[0],
        msg: values[1],
        n_masked: masked.len(),
        n_span: spans.len(),
    })
}

/// Loss of a batch and, when `want_grads`, the gradient of the total
/// with respect to every trainable parameter (`None` for frozen ones).
///
/// Each example runs on its own tape (in parallel under
/// `Execution::Parallel`). The contrastive term couples examples, so its
/// encodings are gathered onto a small tape, differentiated there, and the
/// resulting adjoints are pushed back into each example tape. Gradients are
/// summed in example order, so results do not depend on the execution mode.
#[allow(clippy::type_complexity)]
pub fn combined_loss<T: Real>(
    state: &ModelState<T>,
    views: &[TrainingView],
    cfg: &LossConfig,
    iteration: usize,
    spec: ObjectiveSpec,
    exec: Execution,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<Option<Tensor<T>>>>)> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    cfg.validate()?;
    let lambdas = cfg.lambdas_at(iteration);
    // The contrastive forwards are only run while the term carries weight.
    let with_sscl = lambdas[1] != 0.0;
    let n = views.len();
    let tapes: Vec<ExampleTape<'_, T>> = map_indexed(exec, views, |_, v| {
        example_tape(state, v, cfg, spec, lambdas, n, with_sscl, want_grads)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut sscl = 0.0;
    let mut sscl_adjoints: Option<(Tensor<T>, Tensor<T>)> = None;
    if with_sscl {
        let d = state.config.d_model;
        let gather = |pick: fn(&ExampleTape<'_, T>) -> Var| {
            let data: Vec<T> = tapes.iter().flat_map(|t| t.tape.value(pick(t)).data().to_vec()).collect();
            Tensor::matrix(n, d, data)
        };
        let e = gather(|t| t.e.expect("sscl forward"))?;
        let ep = gather(|t| t.e_plus.expect("sscl forward"))?;
        let mut small = Tape::new();
        let (ev, epv) = (small.leaf(e, true), small.leaf(ep, true));
        let loss = sscl_on_tape(&mut small, ev, epv, cfg.tau)?;
        sscl = small.value(loss).item().to_f64();
        if want_grads {
            let mut g = small.backward(loss)?;
            let lam = T::from_f64(lambdas[1]);
            let scale = |t: Tensor<T>| t.map(|x| x * lam);
            sscl_adjoints = Some((
                scale(g.take(ev).expect("gradient of e")),
                scale(g.take(epv).expect("gradient of e_plus")),
            ));
        }
    }

    let mntp: f64 = tapes.iter().map(|t| t.mntp).sum();
    let msg: f64 = tapes.iter().map(|t| t.msg).sum();
    let breakdown = LossBreakdown {
        mntp,
        sscl,
        msg,
        total: lambdas[0] * mntp + lambdas[1] * sscl + lambdas[2] * msg,
        lambdas,
        n_masked: tapes.iter().map(|t| t.n_masked).sum(),
        n_span: tapes.iter().map(|t| t.n_span).sum(),
        n_pairs: if with_sscl { n } else { 0 },
    };
    if !want_grads {
        return Ok((breakdown, None));
    }

    let per_example: Vec<Vec<Option<Tensor<T>>>> = map_indexed(exec, &tapes, |i, t| {
        let mut seeds = Vec::new();
        if let Some(lm) = t.lm {
            seeds.push((lm, Tensor::scalar(T::one())));
        }
        if let Some((ge, gep)) = &sscl_adjoints {
            seeds.push((t.e.expect("sscl forward"), Tensor::row_vector(ge.row(i).to_vec())));
            seeds.push((t.e_plus.expect("sscl forward"), Tensor::row_vector(gep.row(i).to_vec())));
        }
        if seeds.is_empty() {
            return Ok(vec![None; state.params.len()]);
        }
        let mut g = t.tape.backward_seeded(seeds)?;
        Ok(t.pv.vars.iter().enumerate().map(|(p, &v)| if state.is_trainable(p) { g.take(v) } else { None }).collect())
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut total: Vec<Option<Tensor<T>>> = (0..state.params.len())
        .map(|p| state.is_trainable(p).then(|| Tensor::zeros(state.params[p].shape())))
        .collect();
    for grads in per_example {
        for (acc, g) in total.iter_mut().zip(grads) {
            if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                acc.add_assign(&g);
            }
        }
    }
    Ok((breakdown, Some(total)))
}

/// Finite-difference check of [`combined_loss`] gradients at f64 over up to
/// `max_coords` evenly spaced coordinates of every trainable tensor.
pub fn check_combined_gradients(
    state: &ModelState<f64>,
    views: &[TrainingView],
    cfg: &LossConfig,
    iteration: usize,
    spec: ObjectiveSpec,
    max_coords: usize,
) -> Result<crate::numerics::GradCheckReport> {
    let eps = crate::numerics::DEFAULT_EPS;
    let (_, grads) = combined_loss(state, views, cfg, iteration, spec, Execution::Sequential, true)?;
    let grads = grads.expect("gradients requested");
    let mut probe = state.clone();
    let mut report = crate::numerics::GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };
    for (p, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let n = g.len();
        let step = n.div_ceil(max_coords.max(1)).max(1);
        for j in (0..n).step_by(step) {
            let orig = probe.params[p].data()[j];
            let mut eval = |x: f64| -> Result<f64> {
                probe.params[p].data_mut()[j] = x;
                Ok(combined_loss(&probe, views, cfg, iteration, spec, Execution::Sequential, false)?.0.total)
            };
            let plus = eval(orig + eps)?;
            let minus = eval(orig - eps)?;
            probe.params[p].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let ad = g.data()[j];
            if !fd.is_finite() || !ad.is_finite() {
                return Err(Error::NonFiniteGradient(state.names[p].clone()));
            }
            let err = crate::numerics::relative_error(ad, fd);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((p, j));
            }
        }
    }
    Ok(report)
}
