use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::kernels;
use super::ndtensor::{check_perm, inverse_perm, numel, pad_maps, permute_data, roll_maps, slice_maps, NdTensor, PadMode};
use crate::error::{mismatch, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Exp(Var),
    Sqrt(Var),
    Pow(Var, f64),
    Gelu { x: Var, cdf: Vec<f64> },
    Select { mask: Vec<bool>, a: Var, b: Var },
    Sum(Var),
    Mean(Var),
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, ta: bool, tb: bool },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, cin: usize, cout: usize },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Reshape(Var),
    /// `x` viewed as `view`, axes permuted by `perm`, then reshaped.
    Permute { x: Var, view: Vec<usize>, perm: Vec<usize> },
    Gather { x: Var, maps: Vec<Vec<Option<usize>>> },
    Concat { parts: Vec<Var>, axis: usize },
}

struct Node {
    value: NdTensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward simply walks it in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-op NaN/Inf check (on by default in
    /// debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: NdTensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: NdTensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: NdTensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &NdTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, present for leaves that require
    /// grad and were reached by the pass.
    pub fn grad(&self, v: Var) -> Option<NdTensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(NdTensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<NdTensor> {
        let g = self.grads.get_mut(v.0)?.take()?;
        Some(NdTensor::new(self.nodes[v.0].value.shape().to_vec(), g).expect("grad shape"))
    }

    /// Clears gradients so that backward may run again on this graph.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, name: &'static str, value: NdTensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<NdTensor> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            return NdTensor::new(va.shape().to_vec(), data);
        }
        if vb.len() == 1 {
            let y = vb.data()[0];
            return Ok(va.map(|x| f(x, y)));
        }
        Err(mismatch(name, va.shape(), vb.shape()))
    }

    // ---- elementwise -------------------------------------------------------

    /// `a + b`; `b` may be a one-element tensor broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push("abs", v, Op::Abs(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(libm::exp);
        self.push("exp", v, Op::Exp(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        let v = self.value(a).map(libm::sqrt);
        self.push("sqrt", v, Op::Sqrt(a), &[a])
    }

    /// `a^p`. Non-integer exponents need `a >= 0`. At `a == 0` with `p < 1`
    /// the gradient is taken as zero.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if libm::trunc(p) != p {
            if let Some(bad) = self.value(a).data().iter().find(|&&x| x < 0.0) {
                return Err(Error::Domain {
                    op: "power",
                    detail: format!("negative base {bad} with fractional exponent {p}"),
                });
            }
        }
        let v = self.value(a).map(|x| libm::pow(x, p));
        self.push("power", v, Op::Pow(a, p), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cdf: Vec<f64> = x.data().iter().map(|&v| kernels::normal_cdf(v)).collect();
        let y = x.data().iter().zip(&cdf).map(|(v, c)| v * c).collect();
        let v = NdTensor::new(x.shape().to_vec(), y)?;
        self.push("gelu", v, Op::Gelu { x: a, cdf }, &[a])
    }

    /// Picks `a` where `mask` is set and `b` elsewhere.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("select", va.shape(), vb.shape()));
        }
        if mask.len() != va.len() {
            return Err(Error::Shape {
                op: "select",
                detail: format!("mask of {} entries for {} values", mask.len(), va.len()),
            });
        }
        let data = mask
            .iter()
            .zip(va.data().iter().zip(vb.data()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let v = NdTensor::new(va.shape().to_vec(), data)?;
        self.push("select", v, Op::Select { mask, a, b }, &[a, b])
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", NdTensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                detail: "mean of an empty tensor".into(),
            });
        }
        let s: f64 = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean", NdTensor::scalar(s), Op::Mean(a), &[a])
    }

    // ---- linear algebra ----------------------------------------------------

    /// Matrix product over the last two axes with equal leading batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, true)
    }

    fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let r = sa.len();
        let (m, k) = if ta { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
        let (k2, n) = if tb { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != k2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![0.0; batch * m * n];
        {
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                kernels::gemm(
                    m,
                    k,
                    n,
                    &va[i * m * k..(i + 1) * m * k],
                    ta,
                    &vb[i * k * n..(i + 1) * k * n],
                    tb,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend_from_slice(&[m, n]);
        let v = NdTensor::new(shape, out)?;
        self.push("matmul", v, Op::MatMul { a, b, batch, m, k, n, ta, tb }, &[a, b])
    }

    /// Per-position affine map over the last axis: `x[..., cin] · w[cin, cout] + b`.
    /// On an H×W×C feature map this is a 1×1 convolution.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("linear", &sx, &sw));
        }
        let (cin, cout) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(mismatch("linear", &sw, self.shape(b)));
            }
        }
        let rows = numel(&sx[..sx.len() - 1]);
        let mut out = vec![0.0; rows * cout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm(rows, cin, cout, self.value(x).data(), false, self.value(w).data(), false, &mut out, 1.0);
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = cout;
        let v = NdTensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", v, Op::Linear { x, w, b, rows, cin, cout }, &inputs)
    }

    /// Alias of [`linear`](Self::linear) for H×W×Cin feature maps.
    pub fn conv1x1(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::Shape {
                op: "conv1x1",
                detail: format!("expected H×W×C input, got {:?}", self.shape(x)),
            });
        }
        self.linear(x, weight, bias)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("axis {axis} invalid for shape {shape:?}"),
            });
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let y = kernels::softmax(self.value(x).data(), outer, len, inner);
        let v = NdTensor::new(shape, y)?;
        self.push("softmax", v, Op::Softmax { x, outer, len, inner }, &[x])
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Param(format!("layer_norm eps must be positive, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::Shape {
            op: "layer_norm",
            detail: "scalar input".into(),
        })?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(mismatch("layer_norm", &shape, self.shape(gamma)));
        }
        let rows = numel(&shape) / cols.max(1);
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + bt[c];
            }
        }
        let v = NdTensor::new(shape, out)?;
        self.push("layer_norm", v, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    // ---- data movement -----------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out: Vec<usize> = perm.iter().map(|&p| shape.get(p).copied().unwrap_or(0)).collect();
        self.rearrange(x, &shape, perm, &out)
    }

    /// Reshape to `view`, permute axes, reshape to `out`, as a single node.
    pub fn rearrange(&mut self, x: Var, view: &[usize], perm: &[usize], out: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if numel(view) != len || numel(out) != len {
            return Err(mismatch("rearrange", self.shape(x), out));
        }
        check_perm(view, perm)?;
        let data = permute_data(self.value(x).data(), view, perm);
        let v = NdTensor::new(out.to_vec(), data)?;
        let op = Op::Permute {
            x,
            view: view.to_vec(),
            perm: perm.to_vec(),
        };
        self.push("permute", v, op, &[x])
    }

    pub fn roll(&mut self, x: Var, shifts: &[isize]) -> Result<Var> {
        let maps = roll_maps(self.shape(x), shifts)?;
        self.gather("roll", x, maps)
    }

    pub fn slice(&mut self, x: Var, ranges: &[Range<usize>]) -> Result<Var> {
        let maps = slice_maps(self.shape(x), ranges)?;
        self.gather("slice", x, maps)
    }

    pub fn pad(&mut self, x: Var, pads: &[(usize, usize)], mode: PadMode) -> Result<Var> {
        let maps = pad_maps(self.shape(x), pads, mode)?;
        self.gather("pad", x, maps)
    }

    fn gather(&mut self, name: &'static str, x: Var, maps: Vec<Vec<Option<usize>>>) -> Result<Var> {
        let v = self.value(x).gather(&maps);
        self.push(name, v, Op::Gather { x, maps }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&NdTensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = NdTensor::concat(&values, axis)?;
        self.push("concat", v, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulates d(loss)/d(leaf) into every leaf that requires grad.
    /// Fails on a non-scalar loss or if called twice without
    /// [`reset_grads`](Self::reset_grads).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must have one element, shape is {:?}", self.shape(loss)),
            });
        }
        if self.backward_done {
            return Err(Error::State("backward already ran on this graph; reset_grads first".into()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Reshape(x) => {
                    let x = *x;
                    self.accumulate(x, g);
                }
                Op::Permute { x, view, perm } => {
                    let x = *x;
                    let permuted: Vec<usize> = perm.iter().map(|&p| view[p]).collect();
                    let back = permute_data(&g, &permuted, &inverse_perm(perm));
                    self.accumulate(x, back);
                }
                _ => self.vjp(i, &g),
            }
        }
        Ok(())
    }

    /// Adds an owned gradient into `v`'s accumulator, taking the buffer
    /// when the accumulator is still empty.
    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(d, g)| *d += g),
            slot => *slot = Some(g),
        }
    }

    fn vjp(&mut self, i: usize, g: &[f64]) {
        let Tape { nodes, grads, .. } = self;
        let node = &nodes[i];
        let y = node.value.data();
        // Borrow helper: zero-initialized accumulator for a node, skipped if
        // the node does not need a gradient.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                if val(*b).len() == g.len() {
                    acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g));
                } else {
                    let s: f64 = g.iter().sum();
                    acc(*b, &mut |d| d[0] += sign * s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if vb.len() == g.len() {
                    acc(*a, &mut |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * vb[j];
                        }
                    });
                    acc(*b, &mut |d| {
                        for j in 0..d.len() {
                            d[j] += g[j] * va[j];
                        }
                    });
                } else {
                    let c = vb[0];
                    acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c));
                    let s: f64 = g.iter().zip(va).map(|(g, x)| g * x).sum();
                    acc(*b, &mut |d| d[0] += s);
                }
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        let s = if x[j] > 0.0 {
                            1.0
                        } else if x[j] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        d[j] += g[j] * s;
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * y[j];
                }
            }),
            Op::Sqrt(a) => acc(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * 0.5 / y[j];
                }
            }),
            Op::Pow(a, p) => {
                let x = val(*a);
                let p = *p;
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        let local = if x[j] == 0.0 && p < 1.0 { 0.0 } else { p * libm::pow(x[j], p - 1.0) };
                        d[j] += g[j] * local;
                    }
                });
            }
            Op::Gelu { x: a, cdf } => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * (cdf[j] + x[j] * kernels::normal_pdf(x[j]));
                    }
                });
            }
            Op::Select { mask, a, b } => {
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        if mask[j] {
                            d[j] += g[j];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for j in 0..d.len() {
                        if !mask[j] {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::MatMul { a, b, batch, m, k, n, ta, tb } => {
                let (m, k, n, ta, tb) = (*m, *k, *n, *ta, *tb);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..*batch {
                        let gc = &g[i * m * n..(i + 1) * m * n];
                        let bb = &vb[i * k * n..(i + 1) * k * n];
                        let da = &mut d[i * m * k..(i + 1) * m * k];
                        if ta {
                            kernels::gemm(k, n, m, bb, tb, gc, true, da, 1.0);
                        } else {
                            kernels::gemm(m, n, k, gc, false, bb, !tb, da, 1.0);
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..*batch {
                        let gc = &g[i * m * n..(i + 1) * m * n];
                        let aa = &va[i * m * k..(i + 1) * m * k];
                        let db = &mut d[i * k * n..(i + 1) * k * n];
                        if tb {
                            kernels::gemm(n, m, k, gc, true, aa, ta, db, 1.0);
                        } else {
                            kernels::gemm(k, m, n, aa, !ta, gc, false, db, 1.0);
                        }
                    }
                });
            }
            Op::Linear { x, w, b, rows, cin, cout } => {
                let (rows, cin, cout) = (*rows, *cin, *cout);
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |d| kernels::gemm(rows, cout, cin, g, false, vw, true, d, 1.0));
                acc(*w, &mut |d| kernels::gemm(cin, rows, cout, vx, true, g, false, d, 1.0));
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for row in g.chunks_exact(cout) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    });
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                acc(*x, &mut |d| kernels::softmax_vjp(y, g, d, *outer, *len, *inner));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let cols = val(*gamma).len();
                let gm = val(*gamma);
                acc(*gamma, &mut |d| {
                    for (r, gr) in g.chunks_exact(cols).enumerate() {
                        for c in 0..cols {
                            d[c] += gr[c] * xhat[r * cols + c];
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for gr in g.chunks_exact(cols) {
                        d.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                });
                acc(*x, &mut |d| {
                    let nf = cols as f64;
                    for (r, gr) in g.chunks_exact(cols).enumerate() {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gm[c];
                            mean_dh += dh;
                            mean_dh_h += dh * h[c];
                        }
                        mean_dh /= nf;
                        mean_dh_h /= nf;
                        for c in 0..cols {
                            let dh = gr[c] * gm[c];
                            d[r * cols + c] += rstd[r] * (dh - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Reshape(_) | Op::Permute { .. } => unreachable!("handled in backward"),
            Op::Gather { x, maps } => {
                let shape = nodes[x.0].value.shape();
                acc(*x, &mut |d| NdTensor::scatter_add(d, shape, maps, g));
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let inner = numel(&out_shape[axis + 1..]);
                let outer = numel(&out_shape[..*axis]);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let block = nodes[p.0].value.shape()[*axis] * inner;
                    acc(*p, &mut |d| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            d[o * block..(o + 1) * block].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    offset += block;
                }
            }
        }
    }
}

