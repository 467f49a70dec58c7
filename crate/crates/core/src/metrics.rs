//! PSNR, SSIM and difference maps on [0, 1] RGB images.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::losses::{check_same_dims, difference_map_of, DifferenceHistogram, DifferenceMap};
use crate::mosaic::RgbImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// `10·log10(1 / MSE)` over all pixels and channels; `f64::INFINITY` for
/// identical images.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let n = pred.data.len();
    if n == 0 {
        return Err(Error::Dimension("psnr of an empty image".into()));
    }
    let mse = pred.data.iter().zip(&gt.data).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * libm::log10(mse))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn channel_plane(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM of one channel pair of h×w planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&prod(a, a), h, w, &k);
    let e_bb = filter_valid(&prod(b, b), h, w, &k);
    let e_ab = filter_valid(&prod(a, b), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / mu_a.len() as f64
}

/// Mean local SSIM (11×11 Gaussian window, σ 1.5, valid region), averaged
/// over the three channels.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_same_dims(pred, gt)?;
    if pred.width < SSIM_WINDOW || pred.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            pred.width, pred.height
        )));
    }
    let (h, w) = (pred.height, pred.width);
    let s: f64 = (0..3)
        .map(|c| ssim_plane(&channel_plane(pred, c), &channel_plane(gt, c), h, w))
        .sum();
    Ok(s / 3.0)
}

/// Per-pixel max-over-channels difference map and the histogram of its
/// values (one count per pixel).
pub fn difference_map(pred: &RgbImage, gt: &RgbImage, bins: usize) -> Result<(DifferenceMap, DifferenceHistogram)> {
    let map = difference_map_of(pred, gt)?;
    let hist = DifferenceHistogram::from_values(map.values.iter().copied(), bins)?;
    Ok((map, hist))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    /// Files written alongside the report (difference maps, histograms).
    pub artifacts: Vec<String>,
}

impl MetricsReport {
    pub fn push(&mut self, id: impl Into<String>, psnr: f64, ssim: f64) {
        self.images.push(ImageMetrics {
            id: id.into(),
            psnr,
            ssim,
        });
    }

    /// Evaluates one image pair and records it.
    pub fn evaluate(&mut self, id: impl Into<String>, pred: &RgbImage, gt: &RgbImage) -> Result<&ImageMetrics> {
        let p = psnr(pred, gt)?;
        let s = ssim(pred, gt)?;
        self.push(id, p, s);
        Ok(self.images.last().expect("just pushed"))
    }

    /// Arithmetic mean; infinite when any image is identical to its target.
    pub fn mean_psnr(&self) -> f64 {
        mean(self.images.iter().map(|m| m.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.images.iter().map(|m| m.ssim))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut r = rng::seeded(seed);
        RgbImage::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()])
    }

    fn shifted(img: &RgbImage, d: f64) -> RgbImage {
        RgbImage::new(img.width, img.height, img.data.iter().map(|v| v + d).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let gt = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]);
        assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
        let p = psnr(&shifted(&gt, 0.1), &gt).unwrap();
        assert!((p - 20.0).abs() < 1e-6, "{p}");
        let gt = RgbImage::filled(8, 8, [0.0; 3]);
        let p = psnr(&RgbImage::filled(8, 8, [0.5; 3]), &gt).unwrap();
        // 10·log10(4)
        assert!((p - 6.020599913279624).abs() < 1e-12);
        assert!(psnr(&RgbImage::filled(4, 8, [0.0; 3]), &gt).is_err());
    }

    #[test]
    fn psnr_symmetric_and_decreasing_in_noise() {
        let gt = random_image(16, 16, 1);
        let mut r = rng::seeded(2);
        let noise: Vec<f64> = (0..gt.data.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.001, 0.01, 0.05, 0.1, 0.3] {
            let noisy = RgbImage::new(16, 16, gt.data.iter().zip(&noise).map(|(g, n)| g + amp * n).collect()).unwrap();
            let p = psnr(&noisy, &gt).unwrap();
            assert_eq!(p, psnr(&gt, &noisy).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = random_image(32, 32, 3);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let neg = RgbImage::new(32, 32, x.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&neg, &x).unwrap() < 1.0);
        let small = random_image(10, 20, 4);
        assert!(matches!(ssim(&small, &small), Err(Error::Dimension(_))));
    }

    /// Direct 2-D weighted sums per window position.
    fn ssim_direct(a: &RgbImage, b: &RgbImage) -> f64 {
        let g = |d: f64| libm::exp(-d * d / (2.0 * 1.5 * 1.5));
        let mut win = [[0.0; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = g(i as f64 - 5.0) * g(j as f64 - 5.0);
                norm += *v;
            }
        }
        let (h, w) = (a.height, a.width);
        let mut total = 0.0;
        let mut count = 0;
        for c in 0..3 {
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = win[i][j] / norm;
                            let (pa, pb) = (a.get(y + i, x + j, c), b.get(y + i, x + j, c));
                            ma += k * pa;
                            mb += k * pb;
                            saa += k * pa * pa;
                            sbb += k * pb * pb;
                            sab += k * pa * pb;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula() {
        for seed in 0..3 {
            let a = random_image(32, 32, 10 + seed);
            let b = random_image(32, 32, 20 + seed);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_direct(&a, &b);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn difference_map_examples() {
        let gt = random_image(6, 5, 7);
        let (map, hist) = difference_map(&gt, &gt, 16).unwrap();
        assert!(map.to_gray8().iter().all(|&v| v == 0));
        assert_eq!(hist.total, 30);

        let mut pred = RgbImage::filled(6, 5, [0.0; 3]);
        let gt = pred.clone();
        pred.data[(2 * 6 + 3) * 3 + 1] = 1.0;
        let (map, hist) = difference_map(&pred, &gt, 16).unwrap();
        let gray = map.to_gray8();
        assert_eq!(gray.iter().filter(|&&v| v == 255).count(), 1);
        assert_eq!(gray[2 * 6 + 3], 255);
        assert_eq!(gray.iter().filter(|&&v| v == 0).count(), 29);
        assert_eq!(hist.counts[15], 1);
        assert!(difference_map(&pred, &RgbImage::filled(5, 5, [0.0; 3]), 4).is_err());
    }

    #[test]
    fn report_means() {
        let mut r = MetricsReport::default();
        r.push("a", 30.0, 0.9);
        r.push("b", 31.5, 0.8);
        r.push("c", 28.25, 0.95);
        assert!((r.mean_psnr() - (30.0 + 31.5 + 28.25) / 3.0).abs() < 1e-12);
        assert!((r.mean_ssim() - (0.9 + 0.8 + 0.95) / 3.0).abs() < 1e-12);
        let x = random_image(12, 12, 1);
        r.evaluate("d", &x, &x).unwrap();
        assert_eq!(r.mean_psnr(), f64::INFINITY);
    }
}
