//! Dense row-major kernels shared by the tape ops.
//!
//! Matrix products go through `matrixmultiply`, which picks its kernel for
//! the host CPU at runtime. The arithmetic for an output element depends
//! only on the inner dimension, never on the number of rows or columns,
//! so for one host every result is reproducible bit for bit.

use super::tensor::Real;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    assert!(a.len() >= m * k && b.len() >= k * n);
    // SAFETY: row-major strides over buffers checked above.
    unsafe { T::gemm_strided(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut c) };
    c
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub fn matmul_nt_acc<T: Real>(c: &mut [T], a: &[T], b: &[T], m: usize, n: usize, k: usize) {
    assert!(a.len() >= m * n && b.len() >= k * n);
    // SAFETY: bᵀ is read with row stride 1 and column stride n inside b.
    unsafe { T::gemm_strided(m, n, k, a, n as isize, 1, b, 1, n as isize, c) };
}

/// `c[k×n] += a[m×k]ᵀ · d[m×n]`
pub fn matmul_tn_acc<T: Real>(c: &mut [T], a: &[T], d: &[T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && d.len() >= m * n);
    // SAFETY: aᵀ is read with row stride 1 and column stride k inside a.
    unsafe { T::gemm_strided(k, m, n, a, 1, k as isize, d, n as isize, 1, c) };
}

/// Dot product with eight independent accumulators.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let aa = &a[c * 8..c * 8 + 8];
        let bb = &b[c * 8..c * 8 + 8];
        for j in 0..8 {
            acc[j] += aa[j] * bb[j];
        }
    }
    let mut tail = T::zero();
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Numerically stable log-sum-exp of one row.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// `σ(2u)` where `u` is the argument of the tanh in the tanh-approximation
/// GELU; `1 + tanh(u) = 2σ(2u)` needs a single exponential.
fn gelu_gate<T: Real>(x: T) -> (T, T) {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044_715);
    let u = c * (x + k * x * x * x);
    let s = T::one() / (T::one() + (-(u + u)).exp());
    (s, c * (T::one() + T::from_f64(3.0) * k * x * x))
}

/// tanh-approximation GELU and its derivative.
pub fn gelu<T: Real>(x: T) -> T {
    x * gelu_gate(x).0
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (s, du) = gelu_gate(x);
    let two = T::from_f64(2.0);
    s + two * x * s * (T::one() - s) * du
}
