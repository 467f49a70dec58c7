use alloc::format;
use alloc::vec::Vec;

use super::config::StageWindow;
use crate::error::{Error, Result};
use crate::tensor::{NdTensor, Tape, Var};

/// Additive logit for position pairs that must not attend to each other.
pub const MASK_VALUE: f64 = -1e9;

const PARTITION_PERM: [usize; 5] = [0, 2, 1, 3, 4];

fn partition_dims(shape: &[usize], wh: usize, ww: usize) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] if wh > 0 && ww > 0 && h % wh == 0 && w % ww == 0 => Ok((h, w, c)),
        [h, w, _] => Err(Error::Dimension(format!(
            "feature map {h}×{w} is not divisible by window {wh}×{ww}"
        ))),
        _ => Err(Error::Dimension(format!("window_partition expects H×W×C, got {shape:?}"))),
    }
}

/// H×W×C → nWindows×window²×C, windows in row-major order.
pub fn window_partition(x: &NdTensor, window: usize) -> Result<NdTensor> {
    window_partition_rect(x, window, window)
}

pub fn window_partition_rect(x: &NdTensor, wh: usize, ww: usize) -> Result<NdTensor> {
    let (h, w, c) = partition_dims(x.shape(), wh, ww)?;
    x.reshape(&[h / wh, wh, w / ww, ww, c])?
        .permute(&PARTITION_PERM)?
        .reshape(&[(h / wh) * (w / ww), wh * ww, c])
}

/// Inverse of [`window_partition`] for an `h × w` map.
pub fn window_reverse(windows: &NdTensor, window: usize, h: usize, w: usize) -> Result<NdTensor> {
    window_reverse_rect(windows, window, window, h, w)
}

pub fn window_reverse_rect(windows: &NdTensor, wh: usize, ww: usize, h: usize, w: usize) -> Result<NdTensor> {
    let c = reverse_channels(windows.shape(), wh, ww, h, w)?;
    windows
        .reshape(&[h / wh, w / ww, wh, ww, c])?
        .permute(&PARTITION_PERM)?
        .reshape(&[h, w, c])
}

fn reverse_channels(shape: &[usize], wh: usize, ww: usize, h: usize, w: usize) -> Result<usize> {
    partition_dims(&[h, w, 1], wh, ww)?;
    match *shape {
        [n, len, c] if n == (h / wh) * (w / ww) && len == wh * ww => Ok(c),
        _ => Err(Error::Dimension(format!(
            "windows of shape {shape:?} do not tile a {h}×{w} map with window {wh}×{ww}"
        ))),
    }
}

pub(crate) fn partition_var(tape: &mut Tape, x: Var, wh: usize, ww: usize) -> Result<Var> {
    let (h, w, c) = partition_dims(tape.shape(x), wh, ww)?;
    tape.rearrange(x, &[h / wh, wh, w / ww, ww, c], &PARTITION_PERM, &[(h / wh) * (w / ww), wh * ww, c])
}

pub(crate) fn reverse_var(tape: &mut Tape, x: Var, wh: usize, ww: usize, h: usize, w: usize) -> Result<Var> {
    let c = reverse_channels(tape.shape(x), wh, ww, h, w)?;
    tape.rearrange(x, &[h / wh, w / ww, wh, ww, c], &PARTITION_PERM, &[h, w, c])
}

/// Checks a window/shift pair for an `h × w` map.
pub fn check_window(h: usize, w: usize, win: &StageWindow) -> Result<()> {
    partition_dims(&[h, w, 1], win.win_h, win.win_w)?;
    for (shift, size) in [(win.shift_h, win.win_h), (win.shift_w, win.win_w)] {
        if shift != 0 && shift != size / 2 {
            return Err(Error::Param(format!(
                "shift must be 0 or half the window ({}), got {shift}",
                size / 2
            )));
        }
    }
    Ok(())
}

/// Additive attention mask for the shifted partition of an `h × w` map:
/// nWindows×N×N with 0 where two positions of a window were adjacent before
/// the cyclic roll and [`MASK_VALUE`] where the roll wrapped one of them
/// around the border. `None` when no shift is applied.
pub fn shift_mask(h: usize, w: usize, win: &StageWindow) -> Result<Option<NdTensor>> {
    check_window(h, w, win)?;
    if win.shift_h == 0 && win.shift_w == 0 {
        return Ok(None);
    }
    // Region of each rolled position: which axes wrapped.
    let region = |y: usize, x: usize| ((y + win.shift_h >= h) as u8, (x + win.shift_w >= w) as u8);
    let labels = NdTensor::from_fn(&[h, w, 1], |i| {
        let (a, b) = region(i / w, i % w);
        (2 * a + b) as f64
    });
    let labels = window_partition_rect(&labels, win.win_h, win.win_w)?;
    let (nw, n) = (labels.shape()[0], labels.shape()[1]);
    let l = labels.data();
    let mut mask = Vec::with_capacity(nw * n * n);
    for k in 0..nw {
        let lw = &l[k * n..(k + 1) * n];
        for i in 0..n {
            for j in 0..n {
                mask.push(if lw[i] == lw[j] { 0.0 } else { MASK_VALUE });
            }
        }
    }
    NdTensor::new(alloc::vec![nw, n, n], mask).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn partition_counts_and_round_trip() {
        let x = rand_tensor(&[8, 8, 4], 1);
        let p = window_partition(&x, 4).unwrap();
        assert_eq!(p.shape(), &[4, 16, 4]);
        assert_eq!(window_reverse(&p, 4, 8, 8).unwrap(), x);
        let single = window_partition(&x, 8).unwrap();
        assert_eq!(single.data(), x.data());
        assert_eq!(single.shape(), &[1, 64, 4]);
        let y = rand_tensor(&[4, 12, 2], 2);
        let q = window_partition_rect(&y, 2, 4).unwrap();
        assert_eq!(q.shape(), &[6, 8, 2]);
        assert_eq!(window_reverse_rect(&q, 2, 4, 4, 12).unwrap(), y);
    }

    #[test]
    fn partition_first_window_is_top_left_block() {
        let x = NdTensor::from_fn(&[4, 4, 1], |i| i as f64);
        let p = window_partition(&x, 2).unwrap();
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn indivisible_is_dimension_error() {
        let x = rand_tensor(&[6, 8, 1], 3);
        assert!(matches!(window_partition(&x, 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_shift_is_param_error() {
        let win = StageWindow {
            win_h: 4,
            win_w: 4,
            shift_h: 1,
            shift_w: 2,
        };
        assert!(matches!(shift_mask(8, 8, &win), Err(Error::Param(_))));
    }

    #[test]
    fn mask_blocks_only_wrapped_pairs() {
        let win = StageWindow {
            win_h: 4,
            win_w: 4,
            shift_h: 2,
            shift_w: 2,
        };
        let m = shift_mask(8, 8, &win).unwrap().unwrap();
        assert_eq!(m.shape(), &[4, 16, 16]);
        // The first window lies inside the image after rolling: unmasked.
        assert!(m.data()[..256].iter().all(|&v| v == 0.0));
        // The last window mixes four wrap regions of four cells each.
        let last = &m.data()[3 * 256..];
        assert_eq!(last.iter().filter(|&&v| v == 0.0).count(), 4 * 16);
    }
}
