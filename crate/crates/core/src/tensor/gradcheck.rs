use alloc::format;
use alloc::vec::Vec;

use super::{NdTensor, Tape, Var};
use crate::error::{Error, Result};

/// Relative-error floor used in the denominator of every comparison.
const REL_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of a multi-input finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Compares the tape gradient of a scalar function with central differences
/// at every coordinate of `x`; returns the maximum relative error.
pub fn finite_diff_check<F>(f: F, x: &NdTensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = finite_diff_check_many(|t, v| f(t, v[0]), core::slice::from_ref(x), eps, None)?;
    Ok(report.max_rel_err)
}

/// Like [`finite_diff_check`] over several inputs at once. With
/// `max_coords = Some(k)`, at most `k` evenly spaced coordinates per input
/// are perturbed.
pub fn finite_diff_check_many<F>(f: F, inputs: &[NdTensor], eps: f64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Param(format!("finite-difference eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<NdTensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).unwrap_or_else(|| NdTensor::zeros(x.shape())))
        .collect();
    drop(tape);

    let eval = |probe: &[NdTensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        t.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    let mut probe: Vec<NdTensor> = inputs.to_vec();
    for (which, x) in inputs.iter().enumerate() {
        for c in coords(x.len(), max_coords) {
            let orig = x.data()[c];
            probe[which].data_mut()[c] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[c] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_err(analytic[which].data()[c], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst = (which, c);
            }
        }
    }
    Ok(report)
}

fn coords(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k < len && k > 0 => (0..k).map(|i| i * len / k + (len / k) / 2).collect(),
        _ => (0..len).collect(),
    }
}
