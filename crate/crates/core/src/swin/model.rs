use alloc::format;
use alloc::vec::Vec;

use super::attention::wmsa;
use super::config::{ModelConfig, StageWindow};
use super::params::{ModelParams, ParamVars};
use crate::error::{Error, Result};
use crate::mosaic::{depth_to_space_var, raw_to_tensor, space_to_depth_var, RawImage, RgbImage};
use crate::tensor::{NdTensor, PadMode, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Sinusoidal h×w×C embedding: the first C/2 channels encode the row, the
/// last C/2 the column. Channel `k` of a half uses frequency index `k / 2`,
/// sine on even `k` and cosine on odd `k`.
pub fn positional_embedding(h: usize, w: usize, c: usize) -> Result<NdTensor> {
    if c == 0 || c % 2 != 0 {
        return Err(Error::Param(format!("positional embedding needs an even channel count, got {c}")));
    }
    let half = c / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|k| libm::pow(10000.0, -(((k / 2) * 2) as f64) / half as f64))
        .collect();
    let enc = |p: usize, k: usize| {
        let a = p as f64 * inv_freq[k];
        if k % 2 == 0 {
            libm::sin(a)
        } else {
            libm::cos(a)
        }
    };
    Ok(NdTensor::from_fn(&[h, w, c], |i| {
        let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
        if ch < half {
            enc(y, ch)
        } else {
            enc(x, ch - half)
        }
    }))
}

fn mlp(tape: &mut Tape, x: Var, pv: &ParamVars, prefix: &str) -> Result<Var> {
    let h = tape.linear(x, pv.get(&format!("{prefix}.fc1.weight"))?, Some(pv.get(&format!("{prefix}.fc1.bias"))?))?;
    let h = tape.gelu(h)?;
    tape.linear(h, pv.get(&format!("{prefix}.fc2.weight"))?, Some(pv.get(&format!("{prefix}.fc2.bias"))?))
}

fn norm(tape: &mut Tape, x: Var, pv: &ParamVars, key: &str) -> Result<Var> {
    let g = pv.get(&format!("{key}.weight"))?;
    let b = pv.get(&format!("{key}.bias"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

/// `x + WMSA(LN(x))`, then `+ MLP(LN(·))`. `win` carries the shift to use.
pub fn swin_block(tape: &mut Tape, x: Var, pv: &ParamVars, prefix: &str, win: &StageWindow, heads: usize) -> Result<Var> {
    let n1 = norm(tape, x, pv, &format!("{prefix}.norm1"))?;
    let a = wmsa(tape, n1, pv, &format!("{prefix}.attn"), win, heads)?;
    let x = tape.add(x, a.out)?;
    let n2 = norm(tape, x, pv, &format!("{prefix}.norm2"))?;
    let m = mlp(tape, n2, pv, &format!("{prefix}.mlp"))?;
    tape.add(x, m)
}

/// `depth` blocks under `prefix.block.{j}`, odd blocks shifted.
pub fn swin_stage(tape: &mut Tape, mut x: Var, pv: &ParamVars, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let (h, w) = match *tape.shape(x) {
        [h, w, _] => (h, w),
        ref s => return Err(Error::Dimension(format!("stage expects H×W×C, got {s:?}"))),
    };
    let shifted = cfg.stage_window(h, w);
    let plain = StageWindow {
        shift_h: 0,
        shift_w: 0,
        ..shifted
    };
    for j in 0..cfg.depth {
        let win = if j % 2 == 1 { &shifted } else { &plain };
        x = swin_block(tape, x, pv, &format!("{prefix}.block.{j}"), win, cfg.heads)?;
    }
    Ok(x)
}

/// 2×2 patch merge followed by a bias-free projection `weight: [4C, 2C]`.
pub fn downsample(tape: &mut Tape, x: Var, weight: Var) -> Result<Var> {
    match *tape.shape(x) {
        [h, w, _] if h % 2 == 0 && w % 2 == 0 => {}
        ref s => return Err(Error::Dimension(format!("downsample needs even H and W, got {s:?}"))),
    }
    let merged = space_to_depth_var(tape, x, 2)?;
    tape.linear(merged, weight, None)
}

/// Bias-free projection `weight: [C, 2C]` followed by 2×2 depth-to-space.
pub fn upsample(tape: &mut Tape, x: Var, weight: Var) -> Result<Var> {
    let c = *tape.shape(x).last().unwrap_or(&0);
    if c % 2 != 0 {
        return Err(Error::Dimension(format!("upsample needs an even channel count, got {c}")));
    }
    let expanded = tape.linear(x, weight, None)?;
    depth_to_space_var(tape, expanded, 2)
}

/// Full network on an H×W×1 RAW tensor recorded on `tape`; returns H×W×3
/// without clamping.
pub fn forward_var(tape: &mut Tape, raw: Var, pv: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let (h, w) = match *tape.shape(raw) {
        [h, w, 1] => (h, w),
        ref s => return Err(Error::Dimension(format!("forward expects H×W×1, got {s:?}"))),
    };
    cfg.validate()?;
    cfg.check_input(h, w)?;

    let x = space_to_depth_var(tape, raw, cfg.s)?;
    let x = tape.conv1x1(x, pv.get("embed.proj.weight")?, Some(pv.get("embed.proj.bias")?))?;
    let pos = positional_embedding(h / cfg.s, w / cfg.s, cfg.channels)?;
    let pos = tape.constant(pos);
    let mut x = tape.add(x, pos)?;

    let mut skips = Vec::with_capacity(cfg.stages);
    for i in 0..cfg.stages {
        x = swin_stage(tape, x, pv, &format!("enc.{i}"), cfg)?;
        if i + 1 < cfg.stages {
            skips.push(x);
            x = downsample(tape, x, pv.get(&format!("enc.{i}.down.weight"))?)?;
        }
    }
    for i in (0..cfg.stages - 1).rev() {
        let up = upsample(tape, x, pv.get(&format!("dec.{i}.up.weight"))?)?;
        let cat = tape.concat(&[up, skips[i]], 2)?;
        let fused = tape.conv1x1(cat, pv.get(&format!("dec.{i}.fuse.weight"))?, Some(pv.get(&format!("dec.{i}.fuse.bias"))?))?;
        x = swin_stage(tape, fused, pv, &format!("dec.{i}"), cfg)?;
    }

    let x = depth_to_space_var(tape, x, cfg.s)?;
    tape.conv1x1(x, pv.get("head.proj.weight")?, Some(pv.get("head.proj.bias")?))
}

/// Inference on a valid-size H×W×1 tensor; unclamped.
pub fn forward(raw: &NdTensor, params: &ModelParams, cfg: &ModelConfig) -> Result<NdTensor> {
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params, false);
    let x = tape.constant(raw.clone());
    let y = forward_var(&mut tape, x, &pv, cfg)?;
    Ok(tape.value(y).clone())
}

/// Reflect-pads the bottom and right edges up to `(ph, pw)`, reflecting
/// repeatedly when the image is smaller than the padding.
pub fn reflect_pad_to(x: &NdTensor, ph: usize, pw: usize) -> Result<NdTensor> {
    let mut cur = x.clone();
    loop {
        let (h, w) = (cur.shape()[0], cur.shape()[1]);
        if h >= ph && w >= pw {
            return Ok(cur);
        }
        let add = |n: usize, target: usize| if n >= target { 0 } else { (target - n).min(n.saturating_sub(1)) };
        let (dh, dw) = (add(h, ph), add(w, pw));
        if dh == 0 && dw == 0 {
            // 1-pixel extent: replicate instead.
            let (th, tw) = (ph.max(h), pw.max(w));
            let c = cur.shape()[2];
            let src = cur;
            return Ok(NdTensor::from_fn(&[th, tw, c], |i| {
                let (y, xx, ch) = (i / (tw * c), (i / c) % tw, i % c);
                src.data()[((y.min(h - 1)) * w + xx.min(w - 1)) * c + ch]
            }));
        }
        cur = cur.pad(&[(0, dh), (0, dw), (0, 0)], PadMode::Reflect)?;
    }
}

/// Inference on any H×W×1 tensor: reflect-pad to a valid size, run the
/// network, crop back and clamp to [0, 1].
pub fn predict(raw: &NdTensor, params: &ModelParams, cfg: &ModelConfig) -> Result<NdTensor> {
    let (h, w) = match *raw.shape() {
        [h, w, 1] if h > 0 && w > 0 => (h, w),
        ref s => return Err(Error::Dimension(format!("predict expects H×W×1, got {s:?}"))),
    };
    let (ph, pw) = (cfg.padded_extent(h), cfg.padded_extent(w));
    let padded = reflect_pad_to(raw, ph, pw)?;
    let y = forward(&padded, params, cfg)?;
    let y = if (ph, pw) == (h, w) { y } else { y.slice(&[0..h, 0..w, 0..3])? };
    Ok(y.map(|v| v.clamp(0.0, 1.0)))
}

/// Demosaics a RAW frame with the network.
pub fn reconstruct(raw: &RawImage, params: &ModelParams, cfg: &ModelConfig) -> Result<RgbImage> {
    let t = raw_to_tensor(raw);
    RgbImage::from_tensor(&predict(&t.tensor, params, cfg)?)
}
