//! Rotary position embedding.
//!
//! Feature pairs `(2i, 2i+1)` inside each head are rotated by
//! `pos / base^(2i/head_dim)`, which makes `⟨rope(q, m), rope(k, n)⟩` a
//! function of `m − n` only.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Rotates every `head_dim` block of each row of `x` in place. `inverse`
/// applies the transposed rotation (used by the backward pass).
pub fn rotate_in_place<T: Real>(
    x: &mut Tensor<T>,
    positions: &[usize],
    head_dim: usize,
    base: f64,
    inverse: bool,
) -> Result<()> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("rope needs an even head dim, got {head_dim}")));
    }
    let cols = x.cols();
    if !cols.is_multiple_of(head_dim) || positions.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "rope",
            left: x.shape().to_vec(),
            right: vec![positions.len(), head_dim],
        });
    }
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| 1.0 / base.powf(2.0 * i as f64 / head_dim as f64))
        .collect();
    let mut cos = vec![T::zero(); half];
    let mut sin = vec![T::zero(); half];
    for (r, &pos) in positions.iter().enumerate() {
        for i in 0..half {
            let angle = pos as f64 * inv_freq[i];
            cos[i] = T::from_f64(angle.cos());
            sin[i] = T::from_f64(if inverse { -angle.sin() } else { angle.sin() });
        }
        let row = x.row_mut(r);
        for head in row.chunks_exact_mut(head_dim) {
            for i in 0..half {
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * cos[i] - b * sin[i];
                head[2 * i + 1] = a * sin[i] + b * cos[i];
            }
        }
    }
    Ok(())
}

/// Returns a rotated copy of `x` (rows are positions, one head of width
/// `x.cols()`).
pub fn apply_rope<T: Real>(x: &Tensor<T>, positions: &[usize], base: f64) -> Result<Tensor<T>> {
    let mut out = x.clone();
    rotate_in_place(&mut out, positions, x.cols(), base, false)?;
    Ok(out)
}
