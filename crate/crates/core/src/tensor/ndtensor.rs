use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::Range;

use crate::error::{mismatch, Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NdTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Border handling for [`NdTensor::pad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`d c b | a b c d | c b a`).
    Reflect,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl NdTensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::Shape {
                op: "new",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(mismatch("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_perm(&self.shape, perm)?;
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let data = permute_data(&self.data, &self.shape, perm);
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Cyclic shift along every axis; `out[i] = in[(i - shift) mod n]`.
    pub fn roll(&self, shifts: &[isize]) -> Result<Self> {
        let maps = roll_maps(&self.shape, shifts)?;
        Ok(self.gather(&maps))
    }

    pub fn slice(&self, ranges: &[Range<usize>]) -> Result<Self> {
        let maps = slice_maps(&self.shape, ranges)?;
        Ok(self.gather(&maps))
    }

    /// Pads every axis by `(before, after)` samples.
    pub fn pad(&self, pads: &[(usize, usize)], mode: PadMode) -> Result<Self> {
        let maps = pad_maps(&self.shape, pads, mode)?;
        Ok(self.gather(&maps))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&NdTensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        if axis >= first.ndim() {
            return Err(Error::Shape {
                op: "concat",
                detail: format!("axis {axis} invalid for rank {}", first.ndim()),
            });
        }
        for p in &parts[1..] {
            let same_rank = p.ndim() == first.ndim();
            if !same_rank || p.shape.iter().zip(&first.shape).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(mismatch("concat", &first.shape, &p.shape));
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Self { shape, data })
    }

    /// Output position `j` along axis `a` reads input position `maps[a][j]`
    /// (`None` reads zero).
    pub(crate) fn gather(&self, maps: &[Vec<Option<usize>>]) -> Self {
        let out_shape: Vec<usize> = maps.iter().map(Vec::len).collect();
        let s = strides(&self.shape);
        let offsets: Vec<Vec<Option<usize>>> = maps
            .iter()
            .zip(&s)
            .map(|(m, &st)| m.iter().map(|o| o.map(|i| i * st)).collect())
            .collect();
        let mut data = vec![0.0; numel(&out_shape)];
        for_each_offset(&out_shape, &offsets, |out, src| {
            if let Some(src) = src {
                data[out] = self.data[src];
            }
        });
        Self {
            shape: out_shape,
            data,
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates `grad` (shaped like
    /// the gather output) into `target` (shaped like `self`).
    pub(crate) fn scatter_add(target: &mut [f64], target_shape: &[usize], maps: &[Vec<Option<usize>>], grad: &[f64]) {
        let out_shape: Vec<usize> = maps.iter().map(Vec::len).collect();
        let s = strides(target_shape);
        let offsets: Vec<Vec<Option<usize>>> = maps
            .iter()
            .zip(&s)
            .map(|(m, &st)| m.iter().map(|o| o.map(|i| i * st)).collect())
            .collect();
        for_each_offset(&out_shape, &offsets, |out, src| {
            if let Some(src) = src {
                target[src] += grad[out];
            }
        });
    }

    /// Text dump: one header line with the extents, then the values.
    pub fn to_dump_string(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.shape.iter().map(|d| format!("{d}")).collect();
        s.push_str(&header.join(" "));
        s.push('\n');
        for (i, v) in self.data.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
        s
    }

    pub fn from_dump_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty tensor dump".into()))?;
        let shape = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Data(format!("bad extent {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let data = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|_| Error::Data(format!("bad value {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, data)
    }
}

pub(crate) fn check_perm(shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(Error::Shape {
            op: "permute",
            detail: format!("permutation {perm:?} does not match rank {}", shape.len()),
        });
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(Error::Shape {
                op: "permute",
                detail: format!("{perm:?} is not a permutation"),
            });
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn roll_maps(shape: &[usize], shifts: &[isize]) -> Result<Vec<Vec<Option<usize>>>> {
    if shifts.len() != shape.len() {
        return Err(Error::Shape {
            op: "roll",
            detail: format!("{} shifts for rank {}", shifts.len(), shape.len()),
        });
    }
    Ok(shape
        .iter()
        .zip(shifts)
        .map(|(&n, &s)| {
            (0..n)
                .map(|j| {
                    let src = (j as isize - s).rem_euclid(n.max(1) as isize);
                    Some(src as usize)
                })
                .collect()
        })
        .collect())
}

pub(crate) fn slice_maps(shape: &[usize], ranges: &[Range<usize>]) -> Result<Vec<Vec<Option<usize>>>> {
    if ranges.len() != shape.len() {
        return Err(Error::Shape {
            op: "slice",
            detail: format!("{} ranges for rank {}", ranges.len(), shape.len()),
        });
    }
    for (axis, (r, &n)) in ranges.iter().zip(shape).enumerate() {
        if r.start > r.end || r.end > n {
            return Err(Error::Bounds {
                op: "slice",
                detail: format!("range {}..{} on axis {axis} of extent {n}", r.start, r.end),
            });
        }
    }
    Ok(ranges.iter().map(|r| r.clone().map(Some).collect()).collect())
}

pub(crate) fn pad_maps(shape: &[usize], pads: &[(usize, usize)], mode: PadMode) -> Result<Vec<Vec<Option<usize>>>> {
    if pads.len() != shape.len() {
        return Err(Error::Shape {
            op: "pad",
            detail: format!("{} pad pairs for rank {}", pads.len(), shape.len()),
        });
    }
    let mut maps = Vec::with_capacity(shape.len());
    for (axis, (&(before, after), &n)) in pads.iter().zip(shape).enumerate() {
        if mode == PadMode::Reflect && (before >= n.max(1) || after >= n.max(1)) && (before > 0 || after > 0) {
            return Err(Error::Bounds {
                op: "pad",
                detail: format!("reflect pad ({before}, {after}) needs extent > pad on axis {axis}, got {n}"),
            });
        }
        let map = (0..before + n + after)
            .map(|j| {
                let i = j as isize - before as isize;
                if (0..n as isize).contains(&i) {
                    Some(i as usize)
                } else {
                    match mode {
                        PadMode::Zero => None,
                        PadMode::Reflect => {
                            let r = if i < 0 { -i } else { 2 * (n as isize - 1) - i };
                            Some(r as usize)
                        }
                    }
                }
            })
            .collect();
        maps.push(map);
    }
    Ok(maps)
}

/// Walks every output multi-index, calling `f(flat_out, source_offset)`
/// where the source offset is the sum of per-axis offsets.
fn for_each_offset(out_shape: &[usize], offsets: &[Vec<Option<usize>>], mut f: impl FnMut(usize, Option<usize>)) {
    let total = numel(out_shape);
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, Some(0));
        return;
    }
    let last = rank - 1;
    let inner = &offsets[last];
    let mut idx = vec![0usize; rank];
    let mut out = 0;
    loop {
        let mut base = Some(0usize);
        for a in 0..last {
            base = match (base, offsets[a][idx[a]]) {
                (Some(b), Some(o)) => Some(b + o),
                _ => None,
            };
        }
        for o in inner {
            f(out, base.and_then(|b| o.map(|o| b + o)));
            out += 1;
        }
        // advance the odometer over the outer axes
        let mut a = last;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Row-major data of `src` (shaped `shape`) with axes permuted by `perm`.
pub(crate) fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let total = numel(shape);
    if perm.is_empty() || total == 0 {
        return src.to_vec();
    }
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let last = perm.len() - 1;
    let (n_last, s_last) = (out_shape[last], step[last]);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; last];
    let mut base = 0;
    for _ in 0..total / n_last {
        if s_last == 1 {
            out.extend_from_slice(&src[base..base + n_last]);
        } else {
            out.extend((0..n_last).map(|j| src[base + j * s_last]));
        }
        let mut a = last;
        while a > 0 {
            a -= 1;
            idx[a] += 1;
            base += step[a];
            if idx[a] < out_shape[a] {
                break;
            }
            base -= step[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> NdTensor {
        NdTensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn roll_identities() {
        let x = seq(&[3, 4, 2]);
        assert_eq!(x.roll(&[0, 0, 0]).unwrap(), x);
        assert_eq!(x.roll(&[3, 4, 0]).unwrap(), x);
        assert_eq!(x.roll(&[2, -1, 0]).unwrap().roll(&[-2, 1, 0]).unwrap(), x);
        let r = seq(&[4]).roll(&[1]).unwrap();
        assert_eq!(r.data(), &[3.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn permute_transposes() {
        let x = seq(&[2, 3]);
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn slice_and_bounds() {
        let x = seq(&[3, 3]);
        let s = x.slice(&[1..3, 0..2]).unwrap();
        assert_eq!(s.data(), &[3.0, 4.0, 6.0, 7.0]);
        assert!(matches!(x.slice(&[0..4, 0..1]), Err(Error::Bounds { .. })));
    }

    #[test]
    fn pad_modes() {
        let x = NdTensor::new([4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.pad(&[(1, 2)], PadMode::Zero).unwrap().data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        assert_eq!(x.pad(&[(2, 2)], PadMode::Reflect).unwrap().data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
        assert!(x.pad(&[(4, 0)], PadMode::Reflect).is_err());
    }

    #[test]
    fn concat_last_axis() {
        let a = seq(&[2, 1]);
        let b = NdTensor::full(&[2, 2], 9.0);
        let c = NdTensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[0.0, 9.0, 9.0, 1.0, 9.0, 9.0]);
        assert!(NdTensor::concat(&[&a, &seq(&[3, 1])], 1).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let x = NdTensor::new([2, 2], vec![0.1, -2.5, 1e-300, 3.0]).unwrap();
        let text = x.to_dump_string();
        assert!(text.starts_with("2 2\n"));
        assert_eq!(NdTensor::from_dump_str(&text).unwrap(), x);
    }
}
