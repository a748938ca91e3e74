use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{causal_mask, magnet_mask, TokenRole};
use crate::model::ModelState;
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::Real;
use crate::par::{map_indexed, Execution};

/// A held-out span with its surrounding context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanExample {
    pub left: Vec<u32>,
    pub span: Vec<u32>,
    pub right: Vec<u32>,
}

impl SpanExample {
    pub fn tokens(&self) -> Vec<u32> {
        [self.left.as_slice(), &self.span, &self.right].concat()
    }

    /// Context on both sides, one span in the middle.
    pub fn roles(&self) -> Vec<TokenRole> {
        let mut roles = vec![TokenRole::Context; self.left.len()];
        roles.extend(std::iter::repeat_n(TokenRole::Span(0), self.span.len()));
        roles.extend(std::iter::repeat_n(TokenRole::Context, self.right.len()));
        roles
    }

    fn check(&self, max_seq_len: usize) -> Result<()> {
        if self.span.is_empty() {
            return Err(Error::InvalidArgument("span must be non-empty".into()));
        }
        if self.left.is_empty() {
            return Err(Error::InvalidLength("left context must be non-empty".into()));
        }
        let len = self.left.len() + self.span.len() + self.right.len();
        if len > max_seq_len {
            return Err(Error::InvalidLength(format!("example of {len} tokens exceeds max_seq_len {max_seq_len}")));
        }
        Ok(())
    }
}

/// Which attention the teacher-forced pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplMode {
    /// Hybrid mask: both contexts visible, the span causal.
    Magnet,
    /// Left-to-right only; the right context is never seen by the span.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPpl {
    pub ppl: f64,
    /// Summed negative log-likelihood over all span tokens.
    pub nll: f64,
    pub tokens: usize,
}

/// Summed span NLL of one example and its span length. Span token `l` is
/// scored by the logits of row `l−1`.
pub fn span_nll<T: Real>(state: &ModelState<T>, ex: &SpanExample, mode: PplMode) -> Result<(f64, usize)> {
    ex.check(state.config.max_seq_len)?;
    let tokens = ex.tokens();
    let mask = match mode {
        PplMode::Magnet => magnet_mask(&ex.roles())?,
        PplMode::Causal => causal_mask(tokens.len())?,
    };
    let logits = state.forward(&tokens, &mask)?.logits;
    let start = ex.left.len();
    let mut nll = 0.0;
    for (k, &t) in ex.span.iter().enumerate() {
        let row = logits.row(start + k - 1);
        nll += (log_sum_exp(row) - row[t as usize]).to_f64();
    }
    Ok((nll, ex.span.len()))
}

/// `exp` of the mean span-token NLL, pooled over every token of every
/// example.
pub fn span_ppl<T: Real>(state: &ModelState<T>, examples: &[SpanExample], mode: PplMode, exec: Execution) -> Result<SpanPpl> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("span_ppl needs at least one example".into()));
    }
    let parts = map_indexed(exec, examples, |_, ex| span_nll(state, ex, mode));
    let (mut nll, mut tokens) = (0.0, 0);
    for p in parts {
        let (n, c) = p?;
        nll += n;
        tokens += c;
    }
    Ok(SpanPpl { ppl: (nll / tokens as f64).exp(), nll, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::model::ModelConfig;
    use crate::numerics::Tensor;
    use crate::objectives::loss_msg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(cfg: ModelConfig, seed: u64) -> ModelState<f32> {
        ModelState::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_example(rng: &mut ChaCha8Rng, v: u32, lens: (usize, usize, usize)) -> SpanExample {
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(5..v)).collect::<Vec<u32>>();
        SpanExample { left: draw(lens.0), span: draw(lens.1), right: draw(lens.2) }
    }

    #[test]
    fn uniform_predictor_gives_vocab_size() {
        let mut cfg = tiny_config();
        cfg.vocab_size = 100;
        cfg.tie_embeddings = false;
        let mut m = model(cfg, 1);
        let head = m.layout.lm_head.unwrap();
        m.params[head] = Tensor::zeros(m.params[head].shape());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let exs: Vec<_> = (0..5).map(|_| random_example(&mut rng, 100, (3, 4, 2))).collect();
        for mode in [PplMode::Magnet, PplMode::Causal] {
            let r = span_ppl(&m, &exs, mode, Execution::Sequential).unwrap();
            assert!((r.ppl - 100.0).abs() < 0.1, "{}", r.ppl);
            assert_eq!(r.tokens, 20);
        }
    }

    #[test]
    fn certain_predictor_gives_one() {
        let mut cfg = tiny_config();
        cfg.tie_embeddings = false;
        let mut m = model(cfg, 1);
        let (d, v) = (m.config.d_model, m.config.vocab_size);
        // Identical embeddings make every hidden row the same; a huge head
        // column for token 7 then makes it certain.
        m.params[m.layout.tok_emb] = Tensor::from_fn(v, d, |_, _| 1.0);
        m.params[m.layout.lm_head.unwrap()] = Tensor::from_fn(d, v, |_, c| if c == 7 { 1e3 } else { 0.0 });
        let ex = SpanExample { left: vec![1, 5], span: vec![7, 7, 7], right: vec![9] };
        let r = span_ppl(&m, &[ex], PplMode::Magnet, Execution::Sequential).unwrap();
        assert!((r.ppl - 1.0).abs() < 1e-6);
    }

    #[test]
    fn equals_rescaled_msg_loss() {
        let m = model(tiny_config(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let exs: Vec<_> = (0..4).map(|_| random_example(&mut rng, 23, (4, 3, 3))).collect();
        let l = 10.0;
        let mut batch = 0.0;
        for ex in &exs {
            let roles = ex.roles();
            let toks = ex.tokens();
            let logits = m.forward(&toks, &magnet_mask(&roles).unwrap()).unwrap().logits;
            let target: Vec<Option<u32>> = roles.iter().zip(&toks).map(|(r, &t)| r.is_span().then_some(t)).collect();
            batch += loss_msg(&logits, &target, &roles).unwrap() as f64 / exs.len() as f64;
        }
        let r = span_ppl(&m, &exs, PplMode::Magnet, Execution::Sequential).unwrap();
        let via_loss = (batch * exs.len() as f64 * l / r.tokens as f64).exp();
        assert!((r.ppl - via_loss).abs() < 1e-4, "{} vs {}", r.ppl, via_loss);
    }

    #[test]
    fn infill_steps_reproduce_teacher_forced_nll() {
        let m = model(tiny_config(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ex = random_example(&mut rng, 23, (5, 4, 3));
        let (nll, _) = span_nll(&m, &ex, PplMode::Magnet).unwrap();
        let p = ex.left.len() - 1;
        let budget = ex.span.len();
        let mut stepwise = 0.0;
        for k in 0..budget {
            let toks = [ex.left.as_slice(), &ex.span[..k], &ex.right].concat();
            let mut pos: Vec<usize> = (0..=p + k).collect();
            pos.extend((0..ex.right.len()).map(|i| p + budget + 1 + i));
            let mut roles = vec![TokenRole::Context; ex.left.len()];
            roles.extend(std::iter::repeat_n(TokenRole::Span(0), k));
            roles.extend(std::iter::repeat_n(TokenRole::Context, ex.right.len()));
            let logits = m.forward_at(&toks, &pos, &magnet_mask(&roles).unwrap()).unwrap().logits;
            let row = logits.row(p + k);
            stepwise += (log_sum_exp(row) - row[ex.span[k] as usize]) as f64;
        }
        assert_eq!(nll, stepwise);
    }

    #[test]
    fn magnet_ppl_ignores_right_context_only_in_causal_mode() {
        let m = model(tiny_config(), 7);
        let ex = SpanExample { left: vec![1, 5, 6], span: vec![8, 9], right: vec![10, 11, 2] };
        let mut other = ex.clone();
        other.right = vec![12, 13, 2];
        let c1 = span_nll(&m, &ex, PplMode::Causal).unwrap();
        let c2 = span_nll(&m, &other, PplMode::Causal).unwrap();
        assert_eq!(c1, c2);
        let m1 = span_nll(&m, &ex, PplMode::Magnet).unwrap();
        let m2 = span_nll(&m, &other, PplMode::Magnet).unwrap();
        assert_ne!(m1, m2);
    }

    #[test]
    fn parallel_matches_sequential() {
        let m = model(tiny_config(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let exs: Vec<_> = (0..6).map(|_| random_example(&mut rng, 23, (3, 2, 4))).collect();
        let a = span_ppl(&m, &exs, PplMode::Magnet, Execution::Sequential).unwrap();
        let b = span_ppl(&m, &exs, PplMode::Magnet, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(tiny_config(), 1);
        assert!(span_ppl(&m, &[], PplMode::Magnet, Execution::Sequential).is_err());
        let ex = SpanExample { left: vec![1], span: vec![], right: vec![2] };
        assert!(span_nll(&m, &ex, PplMode::Magnet).is_err());
        let long = SpanExample { left: vec![1; 20], span: vec![5; 10], right: vec![2; 5] };
        assert!(span_nll(&m, &long, PplMode::Magnet).is_err());
    }
}
