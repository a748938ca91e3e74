//! Pre-norm decoder transformer with a pluggable attention mask.
//!
//! The same parameters serve three inference modes: causal generation,
//! bidirectional encoding, and span infilling under the hybrid mask. All
//! computation runs on a [`Tape`], so the training path and the inference
//! path share one implementation.

pub mod checkpoint;
mod inference;
pub mod lora;
pub mod rope;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::MaskMatrix;
use crate::numerics::{Real, Tape, Tensor, Var};

pub use inference::{
    encode_sentence, encode_tokens, generate, generate_continuation, generate_full_recompute, infill, KvCache,
};
pub use lora::{lora_linear, LoraConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub tie_embeddings: bool,
    pub lora: Option<LoraConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2005,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_seq_len: 128,
            rope_base: 10000.0,
            tie_embeddings: true,
            lora: None,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_seq_len];
        if dims.contains(&0) {
            return Err(Error::Config("all model dimensions must be at least 1".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config("head dim must be even for rotary positions".into()));
        }
        if let Some(l) = &self.lora {
            l.validate()?;
        }
        Ok(())
    }
}

/// Indices of the LoRA factors wrapping one weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoraIdx {
    pub a: usize,
    pub b: usize,
}

/// A linear weight and its optional adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIdx {
    pub weight: usize,
    pub lora: Option<LoraIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerIdx {
    pub attn_norm: usize,
    pub wq: LinearIdx,
    pub wk: LinearIdx,
    pub wv: LinearIdx,
    pub wo: LinearIdx,
    pub ffn_norm: usize,
    pub w1: LinearIdx,
    pub w2: LinearIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub layers: Vec<LayerIdx>,
    pub final_norm: usize,
    pub lm_head: Option<usize>,
    pub proj_w: usize,
    pub proj_b: usize,
}

/// Names and shapes of every parameter in canonical order.
pub fn parameter_specs(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>)>) {
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        specs.push((name, shape));
        specs.len() - 1
    };
    let d = cfg.d_model;
    let tok_emb = add("tok_emb".into(), vec![cfg.vocab_size, d]);
    let mut layers = Vec::new();
    for l in 0..cfg.n_layers {
        let mut linear = |name: &str, d_in: usize, d_out: usize| {
            let weight = add(format!("layers.{l}.{name}"), vec![d_in, d_out]);
            let lora = cfg.lora.as_ref().map(|lc| LoraIdx {
                a: add(format!("layers.{l}.{name}.lora_a"), vec![d_in, lc.r]),
                b: add(format!("layers.{l}.{name}.lora_b"), vec![lc.r, d_out]),
            });
            LinearIdx { weight, lora }
        };
        let wq = linear("wq", d, d);
        let wk = linear("wk", d, d);
        let wv = linear("wv", d, d);
        let wo = linear("wo", d, d);
        let w1 = linear("w1", d, cfg.d_ff);
        let w2 = linear("w2", cfg.d_ff, d);
        let attn_norm = add(format!("layers.{l}.attn_norm"), vec![1, d]);
        let ffn_norm = add(format!("layers.{l}.ffn_norm"), vec![1, d]);
        layers.push(LayerIdx { attn_norm, wq, wk, wv, wo, ffn_norm, w1, w2 });
    }
    let final_norm = add("final_norm".into(), vec![1, d]);
    let lm_head = (!cfg.tie_embeddings).then(|| add("lm_head".into(), vec![d, cfg.vocab_size]));
    let proj_w = add("proj.weight".into(), vec![d, d]);
    let proj_b = add("proj.bias".into(), vec![1, d]);
    (
        Layout { tok_emb, layers, final_norm, lm_head, proj_w, proj_b },
        specs,
    )
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Real> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
}

/// Tape handles of every parameter.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// Result of one full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `L×d_model` final hidden states.
    pub hidden: Tensor<T>,
    /// `L×V` next-token logits.
    pub logits: Tensor<T>,
    /// Last-position hidden state.
    pub encoding: Vec<T>,
}

fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()).expect("shape")
}

fn ones<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).map(|_| T::one())
}

impl<T: Real> ModelState<T> {
    /// Fresh random initialization. Adapter factors `B` start at zero, so a
    /// wrapped layer initially equals its base layer.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = parameter_specs(&config);
        let resid_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let mut params = Vec::with_capacity(specs.len());
        let mut names = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = if name == "tok_emb" {
                normal(&shape, 1.0 / (config.d_model as f64).sqrt(), rng)
            } else if name.ends_with("_norm") {
                ones(&shape)
            } else if name.ends_with("lora_b") || name == "proj.bias" {
                Tensor::zeros(&shape)
            } else {
                let mut std = 1.0 / (shape[0] as f64).sqrt();
                if name.ends_with(".wo") || name.ends_with(".w2") {
                    std *= resid_scale;
                }
                normal(&shape, std, rng)
            };
            params.push(t);
            names.push(name);
        }
        Ok(Self { config, layout, names, params })
    }

    /// Builds a state from named tensors in any order.
    pub fn from_named(config: ModelConfig, mut named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = parameter_specs(&config);
        if named.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        let mut names = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let pos = named
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.push(t);
            names.push(name);
        }
        Ok(Self { config, layout, names, params })
    }

    /// Adds freshly initialized adapters to every block linear layer.
    /// Existing parameters are carried over unchanged.
    pub fn with_lora(&self, lora: LoraConfig, rng: &mut impl Rng) -> Result<Self> {
        lora.validate()?;
        let mut config = self.config.clone();
        config.lora = Some(lora);
        let (layout, specs) = parameter_specs(&config);
        let mut params = Vec::with_capacity(specs.len());
        let mut names = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = match self.names.iter().position(|n| *n == name) {
                Some(i) => self.params[i].clone(),
                None if name.ends_with("lora_a") => normal(&shape, 1.0 / (shape[0] as f64).sqrt(), rng),
                None => Tensor::zeros(&shape),
            };
            params.push(t);
            names.push(name);
        }
        Ok(Self { config, layout, names, params })
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// With adapters attached only the adapters and the projection head
    /// are trained; otherwise every parameter is.
    pub fn is_trainable(&self, idx: usize) -> bool {
        if self.config.lora.is_none() {
            return true;
        }
        idx == self.layout.proj_w || idx == self.layout.proj_b || self.names[idx].contains(".lora_")
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Puts every parameter on `tape`. Trainable parameters require
    /// gradients when `track_grads` is set.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>, track_grads: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(p, track_grads && self.is_trainable(i)))
            .collect();
        ParamVars { vars }
    }

    fn linear<'a>(&self, tape: &mut Tape<'a, T>, pv: &ParamVars, x: Var, idx: LinearIdx) -> Result<Var> {
        let y = tape.matmul(x, pv.get(idx.weight))?;
        match (idx.lora, &self.config.lora) {
            (Some(l), Some(lc)) => {
                let xa = tape.matmul(x, pv.get(l.a))?;
                let xab = tape.matmul(xa, pv.get(l.b))?;
                let scaled = tape.scale(xab, T::from_f64(lc.scale()));
                tape.add(y, scaled)
            }
            _ => Ok(y),
        }
    }

    /// Multi-head attention of `q` rows against `k`/`v` rows.
    fn attention<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&MaskMatrix>,
    ) -> Result<Var> {
        let hd = self.config.head_dim();
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (s, e) = (h * hd, (h + 1) * hd);
            let qh = tape.slice_cols(q, s, e)?;
            let kh = tape.slice_cols(k, s, e)?;
            let vh = tape.slice_cols(v, s, e)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.masked_softmax(scores, mask)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        tape.concat_cols(&heads)
    }

    /// Final (normalized) hidden states for `tokens` at `positions`.
    pub fn hidden_on_tape<'a>(
        &self,
        tape: &mut Tape<'a, T>,
        pv: &ParamVars,
        tokens: &[u32],
        positions: &[usize],
        mask: &MaskMatrix,
    ) -> Result<Var> {
        if tokens.is_empty() || tokens.len() != mask.len() || tokens.len() != positions.len() {
            return Err(Error::InvalidLength(format!(
                "{} tokens, {} positions, mask of size {}",
                tokens.len(),
                positions.len(),
                mask.len()
            )));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::InvalidLength(format!(
                "sequence of {} exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        let hd = self.config.head_dim();
        let base = self.config.rope_base;
        let mut h = tape.embedding(pv.get(self.layout.tok_emb), tokens)?;
        for layer in &self.layout.layers {
            let a = tape.rmsnorm(h, pv.get(layer.attn_norm))?;
            let q = self.linear(tape, pv, a, layer.wq)?;
            let k = self.linear(tape, pv, a, layer.wk)?;
            let v = self.linear(tape, pv, a, layer.wv)?;
            let q = tape.rope(q, positions, hd, base)?;
            let k = tape.rope(k, positions, hd, base)?;
            let att = self.attention(tape, q, k, v, Some(mask))?;
            let o = self.linear(tape, pv, att, layer.wo)?;
            h = tape.add(h, o)?;
            let b = tape.rmsnorm(h, pv.get(layer.ffn_norm))?;
            let f = self.linear(tape, pv, b, layer.w1)?;
            let f = tape.gelu(f);
            let f = self.linear(tape, pv, f, layer.w2)?;
            h = tape.add(h, f)?;
        }
        tape.rmsnorm(h, pv.get(self.layout.final_norm))
    }

    /// Next-token logits for every row of `hidden`.
    pub fn logits_on_tape<'a>(&self, tape: &mut Tape<'a, T>, pv: &ParamVars, hidden: Var) -> Result<Var> {
        match self.layout.lm_head {
            Some(head) => tape.matmul(hidden, pv.get(head)),
            None => {
                let et = tape.transpose(pv.get(self.layout.tok_emb));
                tape.matmul(hidden, et)
            }
        }
    }

    /// Projection head followed by row l2-normalization.
    pub fn project_on_tape<'a>(&self, tape: &mut Tape<'a, T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let y = tape.matmul(x, pv.get(self.layout.proj_w))?;
        let y = tape.add_row(y, pv.get(self.layout.proj_b))?;
        Ok(tape.l2_normalize(y))
    }

    /// Full forward at positions `0..L`.
    pub fn forward(&self, tokens: &[u32], mask: &MaskMatrix) -> Result<ForwardOutput<T>> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.forward_at(tokens, &positions, mask)
    }

    /// Full forward with explicit rotary positions.
    pub fn forward_at(&self, tokens: &[u32], positions: &[usize], mask: &MaskMatrix) -> Result<ForwardOutput<T>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let h = self.hidden_on_tape(&mut tape, &pv, tokens, positions, mask)?;
        let logits = self.logits_on_tape(&mut tape, &pv, h)?;
        let hidden = tape.value(h).clone();
        let encoding = hidden.row(hidden.rows() - 1).to_vec();
        Ok(ForwardOutput {
            logits: tape.value(logits).clone(),
            hidden,
            encoding,
        })
    }

    /// Final hidden states only (no LM head).
    pub fn hidden(&self, tokens: &[u32], mask: &MaskMatrix) -> Result<Tensor<T>> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let h = self.hidden_on_tape(&mut tape, &pv, tokens, &positions, mask)?;
        Ok(tape.value(h).clone())
    }
}
