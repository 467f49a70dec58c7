//! Reconstruction losses and difference diagnostics.
//!
//! Each loss exists twice: as a composition of tape ops (used for training,
//! differentiated by the tape) and as a closed-form per-pixel value and
//! derivative in the difference `d` (used for curve export and as a check on
//! the tape route).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::mosaic::RgbImage;
use crate::tensor::{Tape, Var};

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-3;
pub const DEFAULT_LAMBDA_CAP: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    /// `sqrt(d² + eps²)`.
    Charbonnier { eps: f64 },
    /// `(d/a)^g · b` below the threshold `a`, linear from `(a, b)` to
    /// `(1, 1)` above it.
    PixelFocusPower { a: f64, b: f64, g: f64 },
    /// `e^{λd} − λd − 1`.
    PixelFocusExp { lambda: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Charbonnier {
            eps: DEFAULT_CHARBONNIER_EPS,
        }
    }
}

impl LossSpec {
    pub fn pixel_focus_power_default() -> Self {
        LossSpec::PixelFocusPower { a: 0.1, b: 0.05, g: 2.0 }
    }

    /// Short label, e.g. `pf_exp(lambda=1.1)`.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::Charbonnier { eps } => format!("charbonnier(eps={eps})"),
            LossSpec::PixelFocusPower { a, b, g } => format!("pf_power(a={a},b={b},g={g})"),
            LossSpec::PixelFocusExp { lambda } => format!("pf_exp(lambda={lambda})"),
        }
    }

    /// Checks hyperparameter ranges; `lambda` may not exceed `lambda_cap`.
    pub fn validate(&self, lambda_cap: f64) -> Result<()> {
        match *self {
            LossSpec::Charbonnier { eps } if !(eps > 0.0 && eps.is_finite()) => {
                Err(Error::Param(format!("charbonnier eps must be positive, got {eps}")))
            }
            LossSpec::PixelFocusPower { a, b, g } if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0 && g > 0.0 && g.is_finite()) => {
                Err(Error::Param(format!("pixel-focus power needs 0<a<1, 0<b<1, g>0; got a={a}, b={b}, g={g}")))
            }
            LossSpec::PixelFocusExp { lambda } if !(lambda > 0.0 && lambda <= lambda_cap) => Err(Error::Param(format!(
                "pixel-focus exp lambda must be in (0, {lambda_cap}], got {lambda}"
            ))),
            _ => Ok(()),
        }
    }

    /// Per-pixel loss as a function of the difference `d >= 0`.
    pub fn value(&self, d: f64) -> f64 {
        match *self {
            LossSpec::Charbonnier { eps } => libm::sqrt(d * d + eps * eps),
            LossSpec::PixelFocusPower { a, b, g } => {
                if d < a {
                    libm::pow(d / a, g) * b
                } else {
                    (d - 1.0) * (1.0 - b) / (1.0 - a) + 1.0
                }
            }
            // expm1 keeps the small-d region accurate
            LossSpec::PixelFocusExp { lambda } => libm::expm1(lambda * d) - lambda * d,
        }
    }

    /// d(loss)/dd. At the power form's knot the right branch is used.
    pub fn derivative(&self, d: f64) -> f64 {
        match *self {
            LossSpec::Charbonnier { eps } => d / libm::sqrt(d * d + eps * eps),
            LossSpec::PixelFocusPower { a, b, g } => {
                if d < a {
                    if d == 0.0 && g < 1.0 {
                        f64::INFINITY
                    } else {
                        g * b * libm::pow(d / a, g - 1.0) / a
                    }
                } else {
                    (1.0 - b) / (1.0 - a)
                }
            }
            LossSpec::PixelFocusExp { lambda } => lambda * libm::expm1(lambda * d),
        }
    }

    /// Points in (0, 1] where the loss is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            LossSpec::PixelFocusPower { a, .. } => vec![a],
            _ => Vec::new(),
        }
    }

    /// Mean loss over all elements of `pred` vs `gt`, recorded on the tape.
    pub fn apply(&self, tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
        match *self {
            LossSpec::Charbonnier { eps } => charbonnier(tape, pred, gt, eps),
            LossSpec::PixelFocusPower { a, b, g } => pixel_focus_power(tape, pred, gt, a, b, g),
            LossSpec::PixelFocusExp { lambda } => pixel_focus_exp_capped(tape, pred, gt, lambda, f64::INFINITY),
        }
    }
}

fn check_pair(tape: &Tape, pred: Var, gt: Var, op: &'static str) -> Result<()> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(mismatch(op, tape.shape(pred), tape.shape(gt)));
    }
    Ok(())
}

/// Mean of `sqrt((pred − gt)² + eps²)`.
pub fn charbonnier(tape: &mut Tape, pred: Var, gt: Var, eps: f64) -> Result<Var> {
    check_pair(tape, pred, gt, "charbonnier")?;
    LossSpec::Charbonnier { eps }.validate(f64::INFINITY)?;
    let diff = tape.sub(pred, gt)?;
    let sq = tape.mul(diff, diff)?;
    let shifted = tape.add_scalar(sq, eps * eps)?;
    let root = tape.sqrt(shifted)?;
    tape.mean(root)
}

/// Mean of the piecewise power/linear Pixel-Focus loss on `d = |pred − gt|`.
pub fn pixel_focus_power(tape: &mut Tape, pred: Var, gt: Var, a: f64, b: f64, g: f64) -> Result<Var> {
    check_pair(tape, pred, gt, "pixel_focus_power")?;
    LossSpec::PixelFocusPower { a, b, g }.validate(f64::INFINITY)?;
    let diff = tape.sub(pred, gt)?;
    let d = tape.abs(diff)?;
    let below: Vec<bool> = tape.value(d).data().iter().map(|&d| d < a).collect();
    let ratio = tape.scale(d, 1.0 / a)?;
    let pow = tape.powf(ratio, g)?;
    let left = tape.scale(pow, b)?;
    let shifted = tape.add_scalar(d, -1.0)?;
    let sloped = tape.scale(shifted, (1.0 - b) / (1.0 - a))?;
    let right = tape.add_scalar(sloped, 1.0)?;
    let per_pixel = tape.select(below, left, right)?;
    tape.mean(per_pixel)
}

/// Mean of `e^{λd} − λd − 1` on `d = |pred − gt|`, with `λ` capped at
/// [`DEFAULT_LAMBDA_CAP`].
pub fn pixel_focus_exp(tape: &mut Tape, pred: Var, gt: Var, lambda: f64) -> Result<Var> {
    pixel_focus_exp_capped(tape, pred, gt, lambda, DEFAULT_LAMBDA_CAP)
}

pub fn pixel_focus_exp_capped(tape: &mut Tape, pred: Var, gt: Var, lambda: f64, cap: f64) -> Result<Var> {
    check_pair(tape, pred, gt, "pixel_focus_exp")?;
    LossSpec::PixelFocusExp { lambda }.validate(cap)?;
    let diff = tape.sub(pred, gt)?;
    let d = tape.abs(diff)?;
    let ld = tape.scale(d, lambda)?;
    let e = tape.exp(ld)?;
    let t = tape.sub(e, ld)?;
    let per_pixel = tape.add_scalar(t, -1.0)?;
    tape.mean(per_pixel)
}

// ---- curves -------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveSample {
    pub d: f64,
    pub value: f64,
    pub gradient: f64,
}

/// `n` evenly spaced samples of the loss and its derivative on [0, 1].
pub fn loss_curve_samples(spec: &LossSpec, n: usize) -> Result<Vec<CurveSample>> {
    loss_curve_samples_in(spec, n, 0.0, 1.0)
}

/// `n` evenly spaced samples on [lo, hi], both endpoints included.
pub fn loss_curve_samples_in(spec: &LossSpec, n: usize, lo: f64, hi: f64) -> Result<Vec<CurveSample>> {
    if n < 2 {
        return Err(Error::Param(format!("need at least 2 curve samples, got {n}")));
    }
    if !(lo < hi) {
        return Err(Error::Param(format!("empty curve range [{lo}, {hi}]")));
    }
    Ok((0..n)
        .map(|i| {
            let d = if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            CurveSample {
                d,
                value: spec.value(d),
                gradient: spec.derivative(d),
            }
        })
        .collect())
}

// ---- difference diagnostics ------------------------------------------------

/// Histogram of absolute differences over [0, 1]; values above 1 land in
/// the last bin.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl DifferenceHistogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Param(format!("histogram needs at least 2 bins, got {bins}")));
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        let mut total = 0;
        for v in values {
            let idx = ((v * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
            total += 1;
        }
        Ok(Self { edges, counts, total })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total.max(1) as f64).collect()
    }
}

/// Per-pixel maximum absolute difference over the color channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DifferenceMap {
    /// Linear [0, 1] → [0, 255] quantization (values clamped).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize8(v)).collect()
    }
}

pub fn quantize8(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

pub(crate) fn check_same_dims(pred: &RgbImage, gt: &RgbImage) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(mismatch("image pair", &[pred.height, pred.width, 3], &[gt.height, gt.width, 3]));
    }
    Ok(())
}

pub fn difference_map_of(pred: &RgbImage, gt: &RgbImage) -> Result<DifferenceMap> {
    check_same_dims(pred, gt)?;
    let values = pred
        .data
        .chunks_exact(3)
        .zip(gt.data.chunks_exact(3))
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).abs()).fold(0.0, f64::max))
        .collect();
    Ok(DifferenceMap {
        width: pred.width,
        height: pred.height,
        values,
    })
}

/// Histogram of every per-pixel-channel `|pred − gt|`, plus the per-pixel
/// difference map.
pub fn difference_histogram(pred: &RgbImage, gt: &RgbImage, bins: usize) -> Result<(DifferenceHistogram, DifferenceMap)> {
    let map = difference_map_of(pred, gt)?;
    let hist = DifferenceHistogram::from_values(pred.data.iter().zip(&gt.data).map(|(p, g)| (p - g).abs()), bins)?;
    Ok((hist, map))
}
