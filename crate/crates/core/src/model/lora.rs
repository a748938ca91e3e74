//! Low-rank adapters: `y = xW + (α/r)·xAB`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { r: 16, alpha: 32.0 }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.r as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || !self.alpha.is_finite() {
            return Err(Error::Config("lora needs r ≥ 1 and a finite alpha".into()));
        }
        Ok(())
    }
}

/// Adapted linear map for `x: n×d_in`, `w: d_in×d_out`, `a: d_in×r`,
/// `b: r×d_out`.
pub fn lora_linear<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &LoraConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if a.cols() != cfg.r || b.rows() != cfg.r {
        return Err(Error::ShapeMismatch {
            op: "lora_linear",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let (xv, wv, av, bv) = (
        tape.param(x, false),
        tape.param(w, false),
        tape.param(a, false),
        tape.param(b, false),
    );
    let base = tape.matmul(xv, wv)?;
    let xa = tape.matmul(xv, av)?;
    let xab = tape.matmul(xa, bv)?;
    let delta = tape.scale(xab, T::from_f64(cfg.scale()));
    let y = tape.add(base, delta)?;
    Ok(tape.value(y).clone())
}
