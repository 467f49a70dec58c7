use alloc::format;
use alloc::vec::Vec;

use super::config::StageWindow;
use super::params::ParamVars;
use super::window::{partition_var, reverse_var, shift_mask};
use crate::error::{Error, Result};
use crate::tensor::{NdTensor, Tape, Var};

pub struct WmsaOutput {
    /// H×W×C result.
    pub out: Var,
    /// Attention weights, (nWindows·heads)×N×N with index `window · heads +
    /// head`; rows run over keys.
    pub attn: Var,
}

/// Window multi-head self-attention on an H×W×C map using the parameters
/// under `prefix` (`qkv.weight`, `qkv.bias`, `proj.weight`, `proj.bias`).
/// A nonzero shift rolls the map by `(-shift_h, -shift_w)` before
/// partitioning and masks pairs the roll brought together across the border.
pub fn wmsa(tape: &mut Tape, x: Var, pv: &ParamVars, prefix: &str, win: &StageWindow, heads: usize) -> Result<WmsaOutput> {
    let (h, w, c) = match *tape.shape(x) {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::Dimension(format!("wmsa expects H×W×C, got {s:?}"))),
    };
    if heads == 0 || c % heads != 0 {
        return Err(Error::Param(format!("C = {c} is not divisible by heads = {heads}")));
    }
    let mask = shift_mask(h, w, win)?;
    let d = c / heads;
    let (sh, sw) = (win.shift_h as isize, win.shift_w as isize);

    let rolled = if mask.is_some() { tape.roll(x, &[-sh, -sw, 0])? } else { x };
    let windows = partition_var(tape, rolled, win.win_h, win.win_w)?;
    let nw = tape.shape(windows)[0];
    let n = win.win_h * win.win_w;
    let b = nw * heads;

    let wqkv = pv.get(&format!("{prefix}.qkv.weight"))?;
    let bqkv = pv.get(&format!("{prefix}.qkv.bias"))?;
    let mut parts = Vec::with_capacity(3);
    for i in 0..3 {
        let wi = tape.slice(wqkv, &[0..c, i * c..(i + 1) * c])?;
        let bi = tape.slice(bqkv, &[i * c..(i + 1) * c])?;
        let p = tape.linear(windows, wi, Some(bi))?;
        parts.push(tape.rearrange(p, &[nw, n, heads, d], &[0, 2, 1, 3], &[b, n, d])?);
    }
    let q = tape.scale(parts[0], 1.0 / libm::sqrt(d as f64))?;
    let (k, v) = (parts[1], parts[2]);

    let mut logits = tape.matmul_nt(q, k)?;
    if let Some(mask) = mask {
        let mut per_head = Vec::with_capacity(b * n * n);
        for slab in mask.data().chunks_exact(n * n) {
            for _ in 0..heads {
                per_head.extend_from_slice(slab);
            }
        }
        let m = tape.constant(NdTensor::new([b, n, n], per_head)?);
        logits = tape.add(logits, m)?;
    }
    let attn = tape.softmax(logits, 2)?;
    let o = tape.matmul(attn, v)?;
    let o = tape.rearrange(o, &[nw, heads, n, d], &[0, 2, 1, 3], &[nw, n, c])?;

    let wp = pv.get(&format!("{prefix}.proj.weight"))?;
    let bp = pv.get(&format!("{prefix}.proj.bias"))?;
    let o = tape.linear(o, wp, Some(bp))?;
    let o = reverse_var(tape, o, win.win_h, win.win_w, h, w)?;
    let out = if sh != 0 || sw != 0 { tape.roll(o, &[sh, sw, 0])? } else { o };
    Ok(WmsaOutput { out, attn })
}
