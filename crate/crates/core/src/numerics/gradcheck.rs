//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::masks::{causal_mask, MaskMatrix};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error, as `(input index, flat offset)`.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// `|a − b| / max(1e−8, |a| + |b|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares an analytic gradient of `f` at `x` against central differences.
pub fn grad_check<F>(x: &[f64], analytic: &[f64], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if x.len() != analytic.len() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: vec![x.len()],
            right: vec![analytic.len()],
        });
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let g_fd = central_difference(&mut probe, i, eps, &f)?;
        let g_ad = analytic[i];
        if !g_ad.is_finite() {
            return Err(Error::NonFiniteGradient(format!("coordinate {i}")));
        }
        let err = relative_error(g_ad, g_fd);
        report.coords_checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((0, i));
        }
    }
    Ok(report)
}

fn central_difference<F>(probe: &mut [f64], i: usize, eps: f64, f: &F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let orig = probe[i];
    probe[i] = orig + eps;
    let plus = f(probe)?;
    probe[i] = orig - eps;
    let minus = f(probe)?;
    probe[i] = orig;
    let g = (plus - minus) / (2.0 * eps);
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient(format!("coordinate {i}")));
    }
    Ok(g)
}

/// Gradient-checks a scalar function built on a tape from `inputs`.
///
/// `build` receives the tape and one leaf per input and must return a
/// `1×1` node. When `max_coords` is set, only that many evenly spaced
/// coordinates of each input are probed.
pub fn check_tape_fn<F>(inputs: &[Tensor<f64>], build: F, eps: f64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t, false)).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFiniteGradient("function value".into()));
        }
        Ok(v)
    };

    let analytic: Vec<Tensor<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t, true)).collect();
        let out = build(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.len();
        let step = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for j in (0..n).step_by(step) {
            let orig = input.data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let g_fd = (plus - minus) / (2.0 * eps);
            let g_ad = analytic[ti].data()[j];
            if !g_fd.is_finite() || !g_ad.is_finite() {
                return Err(Error::NonFiniteGradient(format!("input {ti} coordinate {j}")));
            }
            let err = relative_error(g_ad, g_fd);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ti, j));
            }
        }
    }
    Ok(report)
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Reduces a matrix to a scalar through a fixed random projection so
/// every output element receives a distinct adjoint.
fn project<'t>(t: &mut Tape<'t, f64>, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = (t.value(x).rows(), t.value(x).cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(random(c, 1, &mut rng));
    let y = t.matmul(x, w)?;
    let u = t.constant(random(1, r, &mut rng));
    t.matmul(u, y)
}

type Build = fn(&mut Tape<'_, f64>, &[Var], &MaskMatrix) -> Result<Var>;

/// Finite-difference checks of every tape primitive on random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(4, 6, &mut rng);
    let y = random(4, 6, &mut rng);
    let g = random(1, 6, &mut rng);
    let w = random(6, 3, &mut rng);
    let table = random(7, 6, &mut rng);
    let mask = causal_mask(4)?;
    let cases: Vec<(&'static str, Vec<Tensor<f64>>, Build)> = vec![
        ("matmul", vec![x.clone(), w], |t, v, _| t.matmul(v[0], v[1])),
        ("add", vec![x.clone(), y.clone()], |t, v, _| t.add(v[0], v[1])),
        ("add_row", vec![x.clone(), g.clone()], |t, v, _| t.add_row(v[0], v[1])),
        ("scale", vec![x.clone()], |t, v, _| Ok(t.scale(v[0], 0.37))),
        ("transpose", vec![x.clone()], |t, v, _| Ok(t.transpose(v[0]))),
        ("softmax_masked", vec![random(4, 4, &mut rng)], |t, v, m| t.masked_softmax(v[0], Some(m))),
        ("softmax", vec![x.clone()], |t, v, _| t.masked_softmax(v[0], None)),
        ("rmsnorm", vec![x.clone(), g.clone()], |t, v, _| t.rmsnorm(v[0], v[1])),
        ("gelu", vec![x.clone()], |t, v, _| Ok(t.gelu(v[0]))),
        ("embedding", vec![table], |t, v, _| t.embedding(v[0], &[3, 1, 3, 6])),
        ("cross_entropy", vec![x.clone()], |t, v, _| t.cross_entropy_rows(v[0], &[0, 5, 2, 2])),
        ("concat_cols", vec![x.clone(), y.clone()], |t, v, _| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![x.clone(), y], |t, v, _| t.concat_rows(&[v[0], v[1]])),
        ("slice_cols", vec![x.clone()], |t, v, _| t.slice_cols(v[0], 2, 5)),
        ("gather_rows", vec![x.clone()], |t, v, _| t.gather_rows(v[0], &[3, 0, 3])),
        ("l2_normalize", vec![x.clone()], |t, v, _| Ok(t.l2_normalize(v[0]))),
        ("rope", vec![x], |t, v, _| t.rope(v[0], &[0, 3, 5, 9], 2, 10000.0)),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, build)| {
            let mask = mask.clone();
            let r = check_tape_fn(
                &inputs,
                move |t, v| {
                    let out = build(t, v, &mask)?;
                    if t.value(out).len() == 1 {
                        Ok(out)
                    } else {
                        project(t, out, 99)
                    }
                },
                DEFAULT_EPS,
                None,
            )?;
            Ok((name, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = grad_check(&[3.0], &[6.0], |x| Ok(x[0] * x[0]), DEFAULT_EPS).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let r = grad_check(&[1.0, -2.0], &[0.0, 0.0], |_| Ok(4.2), DEFAULT_EPS).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_is_an_error() {
        let err = grad_check(&[0.0], &[0.0], |x| Ok(x[0].ln()), DEFAULT_EPS);
        assert!(err.is_err());
        let err = grad_check(&[1.0], &[f64::NAN], |x| Ok(x[0]), DEFAULT_EPS).unwrap_err();
        assert!(err.to_string().contains("non-finite gradient"));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = grad_check(&[2.0], &[1.0], |x| Ok(x[0] * x[0]), DEFAULT_EPS).unwrap();
        assert!(r.max_rel_err > 0.5);
    }
}
