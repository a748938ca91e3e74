//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "MAGNETLB"
//! version      u32
//! config       u32 length + UTF-8 "key=value\n" lines (sorted keys)
//! vocab hash   32 bytes (SHA-256 of the vocab file)
//! meta         u32 length + UTF-8 "key=value\n" lines (sorted keys)
//! tensors      u32 count, then per tensor:
//!                u32 name length, name, u32 ndim, u32 dims…, f32 data
//! ```
//!
//! Encoding is a pure function of the contents, so save→load→save is
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use super::{LoraConfig, ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"MAGNETLB";
pub const FORMAT_VERSION: u32 = 1;
/// Prefix of optimizer-state tensors stored alongside the model.
pub const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: [u8; 32],
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn config_to_kv(c: &ModelConfig) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("vocab_size".into(), c.vocab_size.to_string());
    kv.insert("d_model".into(), c.d_model.to_string());
    kv.insert("n_heads".into(), c.n_heads.to_string());
    kv.insert("n_layers".into(), c.n_layers.to_string());
    kv.insert("d_ff".into(), c.d_ff.to_string());
    kv.insert("max_seq_len".into(), c.max_seq_len.to_string());
    kv.insert("rope_base".into(), c.rope_base.to_string());
    kv.insert("tie_embeddings".into(), c.tie_embeddings.to_string());
    if let Some(l) = &c.lora {
        kv.insert("lora_r".into(), l.r.to_string());
        kv.insert("lora_alpha".into(), l.alpha.to_string());
    }
    kv
}

fn parse<V: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<V> {
    kv.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("config key {key} missing")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("config key {key} malformed")))
}

fn config_from_kv(kv: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let lora = if kv.contains_key("lora_r") {
        Some(LoraConfig {
            r: parse(kv, "lora_r")?,
            alpha: parse(kv, "lora_alpha")?,
        })
    } else {
        None
    };
    Ok(ModelConfig {
        vocab_size: parse(kv, "vocab_size")?,
        d_model: parse(kv, "d_model")?,
        n_heads: parse(kv, "n_heads")?,
        n_layers: parse(kv, "n_layers")?,
        d_ff: parse(kv, "d_ff")?,
        max_seq_len: parse(kv, "max_seq_len")?,
        rope_base: parse(kv, "rope_base")?,
        tie_embeddings: parse(kv, "tie_embeddings")?,
        lora,
    })
}

fn write_kv(out: &mut Vec<u8>, kv: &BTreeMap<String, String>) {
    let text: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn kv(&mut self) -> Result<BTreeMap<String, String>> {
        let text = self.string()?;
        text.lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad key-value line {line:?}")))
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn from_state(state: &ModelState<f32>, vocab_hash: [u8; 32]) -> Self {
        Self {
            config: state.config.clone(),
            vocab_hash,
            meta: BTreeMap::new(),
            tensors: state.names.iter().cloned().zip(state.params.iter().cloned()).collect(),
        }
    }

    /// Model parameters, ignoring any optimizer tensors.
    pub fn to_state(&self) -> Result<ModelState<f32>> {
        let named = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(OPT_PREFIX))
            .cloned()
            .collect();
        ModelState::from_named(self.config.clone(), named)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_kv(&mut out, &config_to_kv(&self.config));
        out.extend_from_slice(&self.vocab_hash);
        write_kv(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = config_from_kv(&r.kv()?)?;
        let vocab_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let meta = r.kv()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { config, vocab_hash, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::causal_mask;
    use crate::model::tests::tiny_config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical_and_logits_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ModelState::<f32>::init(tiny_config(), &mut rng).unwrap();
        let m = m.with_lora(LoraConfig { r: 2, alpha: 4.0 }, &mut rng).unwrap();
        let mut ck = Checkpoint::from_state(&m, [7; 32]);
        ck.meta.insert("iteration".into(), "12".into());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let m2 = back.to_state().unwrap();
        let toks = [1u32, 5, 8, 2];
        let mask = causal_mask(4).unwrap();
        assert_eq!(m.forward(&toks, &mask).unwrap().logits, m2.forward(&toks, &mask).unwrap().logits);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModelState::<f32>::init(tiny_config(), &mut rng).unwrap();
        let bytes = Checkpoint::from_state(&m, [0; 32]).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
