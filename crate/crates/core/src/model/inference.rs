use crate::corpus::{Vocab, BOS, EOS};
use crate::error::{Error, Result};
use crate::masks::{bidirectional_mask, causal_mask, magnet_mask, TokenRole};
use crate::numerics::{Real, Tape, Tensor};

use super::ModelState;

/// Per-layer rotated keys and values of every token decoded so far.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn argmax<T: Real>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

impl<T: Real> ModelState<T> {
    /// Appends one token at the next position under causal attention and
    /// returns its next-token logits. Matches the full causal forward pass
    /// bit for bit.
    pub fn decode_step(&self, cache: &mut KvCache<T>, token: u32) -> Result<Vec<T>> {
        let pos = cache.len;
        if pos >= self.config.max_seq_len {
            return Err(Error::InvalidLength(format!("position {pos} exceeds max_seq_len")));
        }
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let mut h = tape.embedding(pv.get(self.layout.tok_emb), &[token])?;
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let a = tape.rmsnorm(h, pv.get(layer.attn_norm))?;
            let q = self.linear(&mut tape, &pv, a, layer.wq)?;
            let k = self.linear(&mut tape, &pv, a, layer.wk)?;
            let v = self.linear(&mut tape, &pv, a, layer.wv)?;
            let q = tape.rope(q, &[pos], hd, self.config.rope_base)?;
            let k = tape.rope(k, &[pos], hd, self.config.rope_base)?;
            cache.keys[l].extend_from_slice(tape.value(k).data());
            cache.values[l].extend_from_slice(tape.value(v).data());
            let keys = tape.constant(Tensor::matrix(pos + 1, d, cache.keys[l].clone())?);
            let values = tape.constant(Tensor::matrix(pos + 1, d, cache.values[l].clone())?);
            let att = self.attention(&mut tape, q, keys, values, None)?;
            let o = self.linear(&mut tape, &pv, att, layer.wo)?;
            h = tape.add(h, o)?;
            let b = tape.rmsnorm(h, pv.get(layer.ffn_norm))?;
            let f = self.linear(&mut tape, &pv, b, layer.w1)?;
            let f = tape.gelu(f);
            let f = self.linear(&mut tape, &pv, f, layer.w2)?;
            h = tape.add(h, f)?;
        }
        cache.len += 1;
        let h = tape.rmsnorm(h, pv.get(self.layout.final_norm))?;
        let logits = self.logits_on_tape(&mut tape, &pv, h)?;
        Ok(tape.value(logits).data().to_vec())
    }
}

fn check_budget<T: Real>(state: &ModelState<T>, used: usize) -> Result<()> {
    if used > state.config.max_seq_len {
        return Err(Error::InvalidLength(format!(
            "{used} positions requested, max_seq_len is {}",
            state.config.max_seq_len
        )));
    }
    Ok(())
}

/// Greedy causal continuation of `prefix` by up to `budget` tokens,
/// stopping after an EOS.
pub fn generate<T: Real>(prefix: &[u32], budget: usize, state: &ModelState<T>) -> Result<Vec<u32>> {
    if prefix.is_empty() {
        return Err(Error::InvalidLength("prefix must be non-empty".into()));
    }
    check_budget(state, prefix.len() + budget)?;
    let mut out = prefix.to_vec();
    if budget == 0 {
        return Ok(out);
    }
    let mut cache = KvCache::new(state.config.n_layers);
    let mut logits = Vec::new();
    for &t in prefix {
        logits = state.decode_step(&mut cache, t)?;
    }
    for i in 0..budget {
        let next = argmax(&logits);
        out.push(next);
        if next == EOS || i + 1 == budget {
            break;
        }
        logits = state.decode_step(&mut cache, next)?;
    }
    Ok(out)
}

/// Greedy continuation of exactly `length` tokens with EOS excluded from
/// the argmax, so every prefix yields a continuation of equal length.
pub fn generate_continuation<T: Real>(prefix: &[u32], length: usize, state: &ModelState<T>) -> Result<Vec<u32>> {
    if prefix.is_empty() {
        return Err(Error::InvalidLength("prefix must be non-empty".into()));
    }
    check_budget(state, prefix.len() + length)?;
    let mut cache = KvCache::new(state.config.n_layers);
    let mut logits = Vec::new();
    for &t in prefix {
        logits = state.decode_step(&mut cache, t)?;
    }
    let mut out = Vec::with_capacity(length);
    while out.len() < length {
        logits[EOS as usize] = T::neg_infinity();
        let next = argmax(&logits);
        out.push(next);
        if out.len() < length {
            logits = state.decode_step(&mut cache, next)?;
        }
    }
    Ok(out)
}

/// Reference greedy decoder that reruns the full causal forward pass at
/// every step.
pub fn generate_full_recompute<T: Real>(prefix: &[u32], budget: usize, state: &ModelState<T>) -> Result<Vec<u32>> {
    if prefix.is_empty() {
        return Err(Error::InvalidLength("prefix must be non-empty".into()));
    }
    check_budget(state, prefix.len() + budget)?;
    let mut out = prefix.to_vec();
    for _ in 0..budget {
        let f = state.forward(&out, &causal_mask(out.len())?)?;
        let next = argmax(f.logits.row(out.len() - 1));
        out.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

/// Fills up to `span_budget` tokens between `left` and `right`.
///
/// Left context occupies positions `0..=p`, span slots `p+1..=p+budget`,
/// and the right context keeps the positions after the full budget. Each
/// step runs the hybrid mask over context plus the span generated so far;
/// the first span token is read from the hidden state at `p`. Generation
/// stops early if EOS is produced.
pub fn infill<T: Real>(left: &[u32], right: &[u32], span_budget: usize, state: &ModelState<T>) -> Result<Vec<u32>> {
    if span_budget < 1 {
        return Err(Error::InvalidArgument("span budget must be at least 1".into()));
    }
    if left.is_empty() {
        return Err(Error::InvalidLength("left context must be non-empty".into()));
    }
    check_budget(state, left.len() + right.len() + span_budget)?;
    let p = left.len() - 1;
    let right_positions: Vec<usize> = (0..right.len()).map(|i| p + span_budget + 1 + i).collect();
    let mut span: Vec<u32> = Vec::with_capacity(span_budget);
    while span.len() < span_budget {
        let k = span.len();
        let mut tokens = left.to_vec();
        tokens.extend_from_slice(&span);
        tokens.extend_from_slice(right);
        let mut positions: Vec<usize> = (0..=p + k).collect();
        positions.extend_from_slice(&right_positions);
        let mut roles = vec![TokenRole::Context; left.len()];
        roles.extend(std::iter::repeat_n(TokenRole::Span(0), k));
        roles.extend(std::iter::repeat_n(TokenRole::Context, right.len()));
        let f = state.forward_at(&tokens, &positions, &magnet_mask(&roles)?)?;
        let next = argmax(f.logits.row(p + k));
        if next == EOS {
            break;
        }
        span.push(next);
    }
    let mut out = left.to_vec();
    out.extend_from_slice(&span);
    out.extend_from_slice(right);
    Ok(out)
}

/// Sentence encoding: `[BOS] instruction body [EOS]` under bidirectional
/// attention, read at the last position. With `use_projection` the
/// projection head and l2-normalization are applied.
pub fn encode_tokens<T: Real>(body: &[u32], instruction: &[u32], state: &ModelState<T>, use_projection: bool) -> Result<Vec<T>> {
    if body.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty sentence".into()));
    }
    let mut tokens = Vec::with_capacity(body.len() + instruction.len() + 2);
    tokens.push(BOS);
    tokens.extend_from_slice(instruction);
    tokens.extend_from_slice(body);
    tokens.push(EOS);
    check_budget(state, tokens.len())?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let mut tape = Tape::new();
    let pv = state.register(&mut tape, false);
    let h = state.hidden_on_tape(&mut tape, &pv, &tokens, &positions, &bidirectional_mask(tokens.len())?)?;
    let last = tape.slice_rows(h, tokens.len() - 1, tokens.len())?;
    let out = if use_projection {
        state.project_on_tape(&mut tape, &pv, last)?
    } else {
        last
    };
    Ok(tape.value(out).data().to_vec())
}

pub fn encode_sentence<T: Real>(text: &str, vocab: &Vocab, state: &ModelState<T>, use_projection: bool) -> Result<Vec<T>> {
    let body = vocab.encode_words(text);
    encode_tokens(&body, &vocab.instruction_ids(), state, use_projection)
}
