//! Finite-difference verification suite over every differentiable tape op,
//! the three reconstruction losses and a whole model.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::mosaic::{depth_to_space_var, space_to_depth_var};
use crate::rng;
use crate::swin::{forward_var, ModelConfig, ModelParams, ParamVars};
use crate::tensor::{finite_diff_check_many, NdTensor, PadMode, Tape, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
/// Side of the square RAW input used for the whole-model check.
pub const MODEL_INPUT: usize = 16;

/// Every differentiable operation covered by the suite, in report order.
pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "abs",
    "exp",
    "sqrt",
    "powf",
    "gelu",
    "select",
    "sum",
    "mean",
    "matmul",
    "matmul_nt",
    "linear",
    "conv1x1",
    "softmax",
    "layer_norm",
    "reshape",
    "permute",
    "rearrange",
    "roll",
    "slice",
    "pad_zero",
    "pad_reflect",
    "concat",
    "space_to_depth",
    "depth_to_space",
    "window_partition",
    "window_reverse",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Op,
    Loss,
    Model,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Op => "op",
            CheckKind::Loss => "loss",
            CheckKind::Model => "model",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_err: f64,
    pub coords: usize,
}

impl CheckItem {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub model: ModelConfig,
    pub eps: f64,
    pub seed: u64,
    /// Amplitude of the uniform perturbation added to initial weights so
    /// that model gradients rise above the finite-difference noise floor.
    pub perturb: f64,
    /// Coordinates probed per parameter tensor in the model check.
    pub coords_per_param: usize,
}

impl SuiteConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            eps: DEFAULT_EPS,
            seed: 0,
            perturb: 0.1,
            coords_per_param: 2,
        }
    }
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> NdTensor {
    rng::uniform_tensor(shape, seed, lo, hi)
}

/// Uniform in `±[lo, hi]`, random sign.
fn away_from_zero(shape: &[usize], seed: u64, lo: f64, hi: f64) -> NdTensor {
    let mut r = rng::seeded(seed);
    NdTensor::from_fn(shape, |_| {
        let m = r.random_range(lo..hi);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(uniform(tape.shape(y), seed, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check<F>(name: &str, kind: CheckKind, inputs: &[NdTensor], eps: f64, max_coords: Option<usize>, f: F) -> Result<CheckItem>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let r = finite_diff_check_many(f, inputs, eps, max_coords)?;
    Ok(CheckItem {
        name: name.into(),
        kind,
        max_rel_err: r.max_rel_err,
        coords: r.coords_checked,
    })
}

fn check_op(name: &'static str, seed: u64, eps: f64) -> Result<CheckItem> {
    let s = seed.wrapping_mul(1000);
    let x = uniform(&[3, 4, 5], s + 1, -1.0, 1.0);
    let y = uniform(&[3, 4, 5], s + 2, -1.0, 1.0);
    let pos = uniform(&[3, 4, 5], s + 3, 0.2, 2.0);
    let nz = away_from_zero(&[3, 4, 5], s + 4, 0.05, 1.0);
    let ws = s + 5;
    let op = CheckKind::Op;
    macro_rules! unary {
        ($input:expr, |$t:ident, $v:ident| $body:expr) => {
            check(name, op, &[$input], eps, None, |$t, vs| {
                let $v = vs[0];
                let r = $body?;
                weighted_sum($t, r, ws)
            })
        };
    }
    match name {
        "add" => check(name, op, &[x, y], eps, None, |t, v| {
            let r = t.add(v[0], v[1])?;
            weighted_sum(t, r, ws)
        }),
        "sub" => check(name, op, &[x, y], eps, None, |t, v| {
            let r = t.sub(v[0], v[1])?;
            weighted_sum(t, r, ws)
        }),
        "mul" => check(name, op, &[x, y], eps, None, |t, v| {
            let r = t.mul(v[0], v[1])?;
            weighted_sum(t, r, ws)
        }),
        "scale" => unary!(x, |t, v| t.scale(v, -1.7)),
        "add_scalar" => unary!(x, |t, v| t.add_scalar(v, 0.3)),
        "abs" => unary!(nz, |t, v| t.abs(v)),
        "exp" => unary!(x, |t, v| t.exp(v)),
        "sqrt" => unary!(pos, |t, v| t.sqrt(v)),
        "powf" => unary!(pos, |t, v| t.powf(v, 2.3)),
        "gelu" => unary!(uniform(&[3, 4, 5], s + 6, -3.0, 3.0), |t, v| t.gelu(v)),
        "select" => {
            let mut r = rng::seeded(s + 7);
            let mask: Vec<bool> = (0..x.len()).map(|_| r.random_bool(0.5)).collect();
            check(name, op, &[x, y], eps, None, |t, v| {
                let r = t.select(mask.clone(), v[0], v[1])?;
                weighted_sum(t, r, ws)
            })
        }
        "sum" => check(name, op, &[x], eps, None, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
        "mean" => check(name, op, &[x], eps, None, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
        "matmul" => {
            let a = uniform(&[2, 3, 4], s + 8, -1.0, 1.0);
            let b = uniform(&[2, 4, 5], s + 9, -1.0, 1.0);
            check(name, op, &[a, b], eps, None, |t, v| {
                let r = t.matmul(v[0], v[1])?;
                weighted_sum(t, r, ws)
            })
        }
        "matmul_nt" => {
            let a = uniform(&[2, 3, 4], s + 8, -1.0, 1.0);
            let b = uniform(&[2, 5, 4], s + 9, -1.0, 1.0);
            check(name, op, &[a, b], eps, None, |t, v| {
                let r = t.matmul_nt(v[0], v[1])?;
                weighted_sum(t, r, ws)
            })
        }
        "linear" => {
            let w = uniform(&[5, 6], s + 10, -1.0, 1.0);
            let b = uniform(&[6], s + 11, -1.0, 1.0);
            check(name, op, &[x, w, b], eps, None, |t, v| {
                let r = t.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, r, ws)
            })
        }
        "conv1x1" => {
            let w = uniform(&[5, 2], s + 12, -1.0, 1.0);
            let b = uniform(&[2], s + 13, -1.0, 1.0);
            check(name, op, &[x, w, b], eps, None, |t, v| {
                let r = t.conv1x1(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, r, ws)
            })
        }
        "softmax" => {
            let logits = uniform(&[3, 4, 5], s + 14, -2.0, 2.0);
            check(name, op, &[logits], eps, None, |t, v| {
                let a = t.softmax(v[0], 1)?;
                let b = t.softmax(v[0], 2)?;
                let r = t.add(a, b)?;
                weighted_sum(t, r, ws)
            })
        }
        "layer_norm" => {
            let g = uniform(&[5], s + 15, 0.5, 1.5);
            let b = uniform(&[5], s + 16, -0.5, 0.5);
            check(name, op, &[x, g, b], eps, None, |t, v| {
                let r = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, r, ws)
            })
        }
        "reshape" => unary!(x, |t, v| t.reshape(v, &[12, 5])),
        "permute" => unary!(x, |t, v| t.permute(v, &[2, 0, 1])),
        "rearrange" => unary!(x, |t, v| t.rearrange(v, &[3, 2, 2, 5], &[1, 3, 0, 2], &[10, 6])),
        "roll" => unary!(x, |t, v| t.roll(v, &[1, -2, 0])),
        "slice" => unary!(x, |t, v| t.slice(v, &[1..3, 0..4, 2..5])),
        "pad_zero" => unary!(x, |t, v| t.pad(v, &[(1, 2), (0, 1), (0, 0)], PadMode::Zero)),
        "pad_reflect" => unary!(x, |t, v| t.pad(v, &[(2, 1), (1, 3), (0, 0)], PadMode::Reflect)),
        "concat" => {
            let z = uniform(&[3, 4, 2], s + 17, -1.0, 1.0);
            check(name, op, &[x, z], eps, None, |t, v| {
                let r = t.concat(&[v[0], v[1]], 2)?;
                weighted_sum(t, r, ws)
            })
        }
        "space_to_depth" => unary!(uniform(&[4, 8, 3], s + 18, -1.0, 1.0), |t, v| space_to_depth_var(t, v, 2)),
        "depth_to_space" => unary!(uniform(&[2, 4, 8], s + 19, -1.0, 1.0), |t, v| depth_to_space_var(t, v, 2)),
        "window_partition" => {
            unary!(uniform(&[4, 8, 3], s + 20, -1.0, 1.0), |t, v| crate::swin::partition_var(t, v, 2, 4))
        }
        "window_reverse" => {
            unary!(uniform(&[4, 8, 3], s + 21, -1.0, 1.0), |t, v| crate::swin::reverse_var(t, v, 2, 4, 4, 8))
        }
        other => Err(Error::Param(alloc::format!("no gradient check registered for {other:?}"))),
    }
}

/// The three loss families at the default fine-tuning settings.
pub fn suite_losses() -> Vec<(&'static str, LossSpec)> {
    vec![
        ("charbonnier", LossSpec::default()),
        ("pixel_focus_power", LossSpec::pixel_focus_power_default()),
        ("pixel_focus_exp", LossSpec::PixelFocusExp { lambda: 1.1 }),
    ]
}

fn check_loss(name: &'static str, spec: LossSpec, seed: u64, eps: f64) -> Result<CheckItem> {
    let gt = uniform(&[6, 6, 3], seed ^ 0x10, 0.0, 1.0);
    // Differences stay clear of the non-differentiable points d = 0 and d = a.
    let mut r = rng::seeded(seed ^ 0x11);
    let offsets = NdTensor::from_fn(gt.shape(), |_| {
        let m = if r.random_bool(0.5) {
            r.random_range(0.01..0.08)
        } else {
            r.random_range(0.12..0.6)
        };
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let pred = NdTensor::new(gt.shape().to_vec(), gt.data().iter().zip(offsets.data()).map(|(g, o)| g + o).collect())?;
    check(name, CheckKind::Loss, &[pred], eps, None, |t, v| {
        let g = t.constant(gt.clone());
        spec.apply(t, v[0], g)
    })
}

fn check_model(cfg: &SuiteConfig) -> Result<CheckItem> {
    let mut params = ModelParams::init(&cfg.model)?;
    params.perturb(cfg.seed ^ 0x20, cfg.perturb);
    let keys: Vec<String> = params.keys().cloned().collect();
    let mut inputs = vec![uniform(&[MODEL_INPUT, MODEL_INPUT, 1], cfg.seed ^ 0x21, 0.0, 1.0)];
    inputs.extend(keys.iter().map(|k| params.get(k).expect("key from manifest").clone()));
    let ws = cfg.seed ^ 0x22;
    let name = alloc::format!("model({}x{})", MODEL_INPUT, MODEL_INPUT);
    check(&name, CheckKind::Model, &inputs, cfg.eps, Some(cfg.coords_per_param), |t, v| {
        let replaced: Vec<(&str, Var)> = keys.iter().map(String::as_str).zip(v[1..].iter().copied()).collect();
        let pv = ParamVars::bind_with(t, &params, false, &replaced);
        let y = forward_var(t, v[0], &pv, &cfg.model)?;
        weighted_sum(t, y, ws)
    })
}

/// Runs every op check, every loss check and the whole-model check, in
/// that order.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckItem>> {
    cfg.model.validate()?;
    let mut items = Vec::with_capacity(OPS.len() + 4);
    for (i, &name) in OPS.iter().enumerate() {
        items.push(check_op(name, cfg.seed.wrapping_add(i as u64), cfg.eps)?);
    }
    for (name, spec) in suite_losses() {
        items.push(check_loss(name, spec, cfg.seed, cfg.eps)?);
    }
    items.push(check_model(cfg)?);
    Ok(items)
}
