use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TaggedSentence, Vocab, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::masks::bidirectional_mask;
use crate::model::ModelState;
use crate::numerics::{Real, Tensor};
use crate::par::{map_indexed, Execution};
use crate::rng::stream;

/// Hidden row `i−1`: the state that predicts position `i`.
pub fn token_representation<T: Real>(hidden: &Tensor<T>, i: usize) -> Result<Vec<T>> {
    if i == 0 || i >= hidden.rows() {
        return Err(Error::InvalidArgument(format!(
            "token position {i} has no predictor row in a sequence of {}",
            hidden.rows()
        )));
    }
    Ok(hidden.row(i - 1).to_vec())
}

/// Mean of the shifted rows of tokens `start..end`.
pub fn word_representation<T: Real>(hidden: &Tensor<T>, start: usize, end: usize) -> Result<Vec<T>> {
    if start >= end {
        return Err(Error::InvalidArgument(format!("empty word span {start}..{end}")));
    }
    let mut acc = token_representation(hidden, start)?;
    for i in start + 1..end {
        for (a, &x) in acc.iter_mut().zip(token_representation(hidden, i)?.iter()) {
            *a += x;
        }
    }
    let inv = T::one() / T::from_f64((end - start) as f64);
    Ok(acc.into_iter().map(|a| a * inv).collect())
}

/// Word-level features of tagged sentences: each sentence runs as
/// `[BOS] words [EOS]` under bidirectional attention. Returns one feature
/// row, tag and sentence index per word.
pub fn tagging_features<T: Real>(
    state: &ModelState<T>,
    sentences: &[TaggedSentence],
    vocab: &Vocab,
    exec: Execution,
) -> Result<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>)> {
    let per_sentence = map_indexed(exec, sentences, |_, s| -> Result<Vec<(Vec<f64>, usize)>> {
        let mut tokens = vec![BOS];
        let mut spans = Vec::with_capacity(s.words.len());
        for w in &s.words {
            let start = tokens.len();
            tokens.extend(tokenize(w).map(|t| vocab.id(t).unwrap_or(UNK)));
            spans.push((start, tokens.len()));
        }
        tokens.push(EOS);
        let hidden = state.hidden(&tokens, &bidirectional_mask(tokens.len())?)?;
        spans
            .iter()
            .zip(&s.tags)
            .map(|(&(a, b), tag)| {
                let rep = word_representation(&hidden, a, b)?;
                Ok((rep.into_iter().map(Real::to_f64).collect(), tag.index()))
            })
            .collect()
    });
    let (mut xs, mut ys, mut owner) = (Vec::new(), Vec::new(), Vec::new());
    for (i, r) in per_sentence.into_iter().enumerate() {
        for (x, y) in r? {
            xs.push(x);
            ys.push(y);
            owner.push(i);
        }
    }
    Ok((xs, ys, owner))
}

/// Marks items whose owner falls in the last `test_fraction` of owners,
/// so no sentence contributes to both sides.
pub fn split_train_test(owner: &[usize], test_fraction: f64) -> Vec<bool> {
    let n_owners = owner.iter().max().map_or(0, |m| m + 1);
    let cut = n_owners - ((n_owners as f64 * test_fraction).round() as usize).min(n_owners);
    owner.iter().map(|&o| o >= cut).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 4000, batch_size: 8, lr: 5e-4, dropout: 0.1, test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Test accuracy of always predicting the most frequent training tag.
    pub majority_baseline: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Softmax regression on frozen features with Adam, input dropout, and
/// minibatches drawn with replacement from the training rows.
pub fn linear_probe(xs: &[Vec<f64>], ys: &[usize], is_test: &[bool], cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    if xs.len() != ys.len() || xs.len() != is_test.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("probe inputs disagree in length or are empty".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidArgument("probe features have ragged widths".into()));
    }
    let k = ys.iter().max().map_or(0, |m| m + 1);
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::InvalidArgument("probe needs at least two classes".into()));
    }
    let train: Vec<usize> = (0..xs.len()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..xs.len()).filter(|&i| is_test[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("probe split leaves an empty side".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config("probe batch_size must be ≥ 1 and dropout in [0, 1)".into()));
    }

    let mut counts = vec![0usize; k];
    for &i in &train {
        counts[ys[i]] += 1;
    }
    let majority = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let majority_baseline = test.iter().filter(|&&i| ys[i] == majority).count() as f64 / test.len() as f64;

    // Parameters: weights d×k then bias k, updated with Adam.
    let np = d * k + k;
    let mut w = vec![0.0f64; np];
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut rng = stream(seed, "eval.probe", 0);
    let keep = 1.0 - cfg.dropout;
    let mut grad = vec![0.0; np];
    let mut xin = vec![0.0; d];
    let mut logits = vec![0.0; k];
    for step in 1..=cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..cfg.batch_size {
            let i = *train.choose(&mut rng).expect("non-empty");
            for (dst, &x) in xin.iter_mut().zip(&xs[i]) {
                *dst = if cfg.dropout > 0.0 && rng.gen::<f64>() >= keep { 0.0 } else { x / keep };
            }
            scores(&w, &xin, k, &mut logits);
            softmax_in_place(&mut logits);
            logits[ys[i]] -= 1.0;
            for (j, &x) in xin.iter().enumerate() {
                if x != 0.0 {
                    for c in 0..k {
                        grad[j * k + c] += x * logits[c];
                    }
                }
            }
            for c in 0..k {
                grad[d * k + c] += logits[c];
            }
        }
        let inv_b = 1.0 / cfg.batch_size as f64;
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        for p in 0..np {
            let g = grad[p] * inv_b;
            m[p] = b1 * m[p] + (1.0 - b1) * g;
            v[p] = b2 * v[p] + (1.0 - b2) * g * g;
            w[p] -= cfg.lr * (m[p] / c1) / ((v[p] / c2).sqrt() + eps);
        }
    }

    let correct = test
        .iter()
        .filter(|&&i| {
            scores(&w, &xs[i], k, &mut logits);
            argmax(&logits) == ys[i]
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        majority_baseline,
        train_size: train.len(),
        test_size: test.len(),
    })
}

fn scores(w: &[f64], x: &[f64], k: usize, out: &mut [f64]) {
    let d = x.len();
    out.copy_from_slice(&w[d * k..]);
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for c in 0..k {
                out[c] += xj * w[j * k + c];
            }
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in z.iter_mut() {
        *x /= sum;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = i;
        }
    }
    best
}
