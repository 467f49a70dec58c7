//! Raw numeric kernels over flat slices. No shape checking here; the tape
//! validates shapes before calling in.

/// `c = beta * c + op(a) * op(b)` with `op(a)` of size m×k and `op(b)` k×n.
/// A transposed operand is stored with its own row-major layout (k×m / n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents computed above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Softmax over the middle axis of an `outer × len × inner` layout.
pub(crate) fn softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> alloc::vec::Vec<f64> {
    let mut y = alloc::vec![0.0; x.len()];
    if inner == 1 {
        for (xr, yr) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)) {
            let max = xr.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for (yv, &xv) in yr.iter_mut().zip(xr) {
                *yv = exp(xv - max);
                sum += *yv;
            }
            let inv = 1.0 / sum;
            yr.iter_mut().for_each(|v| *v *= inv);
        }
        return y;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = exp(x[at(j)] - max);
                y[at(j)] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for j in 0..len {
                y[at(j)] *= inv;
            }
        }
    }
    y
}

pub(crate) fn softmax_vjp(y: &[f64], g: &[f64], dx: &mut [f64], outer: usize, len: usize, inner: usize) {
    if inner == 1 {
        for ((yr, gr), dr) in y.chunks_exact(len).zip(g.chunks_exact(len)).zip(dx.chunks_exact_mut(len)) {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..len {
                dr[j] += yr[j] * (gr[j] - dot);
            }
        }
        return;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = 0.0;
            for j in 0..len {
                dot += g[at(j)] * y[at(j)];
            }
            for j in 0..len {
                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[cfg(test)]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[cfg(test)]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// The platform `exp` when `std` is available (faster), `libm` otherwise.
#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.exp()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::exp(x)
    }
}
