//! Training views: span marking and context masking (the masked stream)
//! and token-level augmentation (the positive view).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, MASK, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::masks::{validate_roles, TokenRole};
use crate::rng::{stream, Rng as StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpanConfig {
    pub max_spans: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub span_prob: f64,
    pub all_span_prob: f64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self { max_spans: 2, min_len: 4, max_len: 16, span_prob: 1.0, all_span_prob: 0.25 }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl SpanConfig {
    /// Every example is a single span over `[1, L)`.
    pub fn all_span() -> Self {
        Self { all_span_prob: 1.0, ..Self::default() }
    }

    /// No spans at all.
    pub fn none() -> Self {
        Self { span_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_spans == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("span config needs max_spans ≥ 1 and 1 ≤ min_len ≤ max_len".into()));
        }
        check_prob("span_prob", self.span_prob)?;
        check_prob("all_span_prob", self.all_span_prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub rate: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { rate: 0.2, mask_prob: 0.8, random_prob: 0.1 }
    }
}

impl MaskingConfig {
    /// Probability a selected token is left unchanged.
    pub fn keep_prob(&self) -> f64 {
        1.0 - self.mask_prob - self.random_prob
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("masking rate {} outside (0, 1)", self.rate)));
        }
        check_prob("mask_prob", self.mask_prob)?;
        check_prob("random_prob", self.random_prob)?;
        check_prob("keep_prob", self.keep_prob())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub dropout: f64,
    pub swap: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { dropout: 0.1, swap: 0.1 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("dropout", self.dropout)?;
        check_prob("swap", self.swap)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewConfig {
    pub spans: SpanConfig,
    pub masking: MaskingConfig,
    pub augment: AugmentConfig,
    /// Skip context masking entirely (plain causal pretraining).
    pub no_masking: bool,
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        self.spans.validate()?;
        self.masking.validate()?;
        self.augment.validate()
    }
}

/// Marks up to `max_spans` separated spans inside `[1, L−1)`, or with
/// probability `all_span_prob` one span over all of `[1, L)`.
pub fn select_spans(len: usize, cfg: &SpanConfig, rng: &mut impl Rng) -> Vec<TokenRole> {
    let mut roles = vec![TokenRole::Context; len];
    if len < 2 || rng.gen::<f64>() >= cfg.span_prob {
        return roles;
    }
    if rng.gen::<f64>() < cfg.all_span_prob {
        roles[1..].fill(TokenRole::Span(0));
        return roles;
    }
    let interior = len.saturating_sub(2);
    let hi = cfg.max_len.min(len - 1).min(interior);
    if hi == 0 {
        return roles;
    }
    let lo = cfg.min_len.min(hi);
    let mut k = rng.gen_range(1..=cfg.max_spans);
    while k > 1 && k * lo + (k - 1) > interior {
        k -= 1;
    }
    // Lengths drawn in turn, each leaving room for the spans still to come.
    let mut lens = Vec::with_capacity(k);
    let mut budget = interior - (k - 1);
    for j in 0..k {
        let reserve = (k - 1 - j) * lo;
        let top = hi.min(budget - reserve);
        let l = rng.gen_range(lo..=top);
        lens.push(l);
        budget -= l;
    }
    // Spread the leftover positions over the k+1 gaps uniformly.
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=budget)).collect();
    cuts.sort_unstable();
    let mut pos = 1;
    let mut prev = 0;
    for (j, &l) in lens.iter().enumerate() {
        pos += cuts[j] - prev;
        prev = cuts[j];
        roles[pos..pos + l].fill(TokenRole::Span(j as u32));
        pos += l + 1;
    }
    roles
}

/// Selects `max(1, round(rate·eligible))` Context positions (never BOS,
/// EOS or position 0/L−1) and corrupts them per the mask/random/keep policy.
/// Returns the corrupted sequence and the original tokens at selected
/// positions.
pub fn apply_masking(
    x: &[u32],
    roles: &[TokenRole],
    cfg: &MaskingConfig,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> (Vec<u32>, Vec<Option<u32>>) {
    let n = x.len();
    let eligible: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| !roles[i].is_span() && x[i] != BOS && x[i] != EOS)
        .collect();
    let mut masked = x.to_vec();
    let mut target = vec![None; n];
    if eligible.is_empty() {
        return (masked, target);
    }
    let count = ((cfg.rate * eligible.len() as f64).round() as usize).clamp(1, eligible.len());
    let mut chosen: Vec<usize> = sample(rng, eligible.len(), count).into_iter().map(|i| eligible[i]).collect();
    chosen.sort_unstable();
    for i in chosen {
        target[i] = Some(x[i]);
        let u: f64 = rng.gen();
        if u < cfg.mask_prob {
            masked[i] = MASK;
        } else if u < cfg.mask_prob + cfg.random_prob && vocab_size > NUM_SPECIALS as usize {
            masked[i] = rng.gen_range(NUM_SPECIALS..vocab_size as u32);
        }
    }
    (masked, target)
}

/// Swaps interior positions `i` and `i+1`.
pub fn swap_at(x: &[u32], i: usize) -> Vec<u32> {
    let mut y = x.to_vec();
    y.swap(i, i + 1);
    y
}

/// Word dropout and adjacent swaps over the interior `[1, L−1)`. When the
/// random edits leave `x` unchanged and either probability is positive, one
/// edit is forced so the positive view differs from its anchor.
pub fn augment(x: &[u32], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<u32> {
    let n = x.len();
    if n < 3 || (cfg.dropout == 0.0 && cfg.swap == 0.0) {
        return x.to_vec();
    }
    let inner = &x[1..n - 1];
    let mut kept: Vec<u32> = inner.iter().copied().filter(|_| rng.gen::<f64>() >= cfg.dropout).collect();
    if kept.is_empty() {
        kept.push(inner[rng.gen_range(0..inner.len())]);
    }
    let mut i = 0;
    while i + 1 < kept.len() {
        if rng.gen::<f64>() < cfg.swap {
            kept.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    if kept == inner {
        let swappable: Vec<usize> = (0..inner.len().saturating_sub(1)).filter(|&i| inner[i] != inner[i + 1]).collect();
        let want_swap = rng.gen::<f64>() < cfg.swap / (cfg.swap + cfg.dropout);
        if (want_swap || inner.len() < 2) && !swappable.is_empty() {
            let i = swappable[rng.gen_range(0..swappable.len())];
            kept.swap(i, i + 1);
        } else if inner.len() >= 2 {
            kept.remove(rng.gen_range(0..inner.len()));
        }
    }
    let mut out = Vec::with_capacity(kept.len() + 2);
    out.push(x[0]);
    out.extend(kept);
    out.push(x[n - 1]);
    out
}

/// Optimal-string-alignment distance: insertions, deletions,
/// substitutions and adjacent transpositions each cost 1.
pub fn osa_distance(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// The three inputs of one training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingView {
    pub x: Vec<u32>,
    pub x_masked: Vec<u32>,
    pub roles: Vec<TokenRole>,
    pub mntp_target: Vec<Option<u32>>,
    pub span_target: Vec<Option<u32>>,
    pub x_plus: Vec<u32>,
    /// `x` with the instruction inserted after BOS.
    pub x_instr: Vec<u32>,
    /// `x_plus` with the instruction inserted after BOS.
    pub x_plus_instr: Vec<u32>,
}

fn with_instruction(x: &[u32], instruction: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(x.len() + instruction.len());
    out.push(x[0]);
    out.extend_from_slice(instruction);
    out.extend_from_slice(&x[1..]);
    out
}

impl TrainingView {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn num_masked(&self) -> usize {
        self.mntp_target.iter().flatten().count()
    }

    pub fn num_span(&self) -> usize {
        self.span_target.iter().flatten().count()
    }

    /// Checks the structural invariants tying targets to roles.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if [self.x_masked.len(), self.roles.len(), self.mntp_target.len(), self.span_target.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::InvalidLength("view fields disagree in length".into()));
        }
        validate_roles(&self.roles)?;
        for i in 0..n {
            let span = self.roles[i].is_span();
            if span != self.span_target[i].is_some() || (span && self.span_target[i] != Some(self.x[i])) {
                return Err(Error::MalformedSpans(format!("span target mismatch at {i}")));
            }
            match self.mntp_target[i] {
                Some(t) if span || t != self.x[i] || i == 0 || i == n - 1 => {
                    return Err(Error::InvalidArgument(format!("bad mask target at {i}")));
                }
                None if self.x_masked[i] != self.x[i] => {
                    return Err(Error::InvalidArgument(format!("unselected position {i} altered")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Builds a view using the named sub-streams `views.spans`,
/// `views.masking` and `views.augment` at `index`.
pub fn make_view_seeded(
    x: &[u32],
    cfg: &ViewConfig,
    instruction: &[u32],
    vocab_size: usize,
    seed: u64,
    index: u64,
) -> Result<TrainingView> {
    if x.len() < 2 || x[0] != BOS || x[x.len() - 1] != EOS {
        return Err(Error::InvalidLength(format!("view input of length {} is not a framed sequence", x.len())));
    }
    let mut span_rng: StreamRng = stream(seed, "views.spans", index);
    let mut mask_rng = stream(seed, "views.masking", index);
    let mut aug_rng = stream(seed, "views.augment", index);
    let roles = select_spans(x.len(), &cfg.spans, &mut span_rng);
    let (x_masked, mntp_target) = if cfg.no_masking {
        (x.to_vec(), vec![None; x.len()])
    } else {
        apply_masking(x, &roles, &cfg.masking, vocab_size, &mut mask_rng)
    };
    let span_target = roles.iter().zip(x).map(|(r, &t)| r.is_span().then_some(t)).collect();
    let x_plus = augment(x, &cfg.augment, &mut aug_rng);
    Ok(TrainingView {
        x: x.to_vec(),
        x_masked,
        x_instr: with_instruction(x, instruction),
        x_plus_instr: with_instruction(&x_plus, instruction),
        roles,
        mntp_target,
        span_target,
        x_plus,
    })
}

/// Builds a view from a seed drawn from `rng`.
pub fn make_view(
    x: &[u32],
    cfg: &ViewConfig,
    instruction: &[u32],
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<TrainingView> {
    make_view_seeded(x, cfg, instruction, vocab_size, rng.gen(), 0)
}
