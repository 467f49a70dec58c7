//! Procedural RGB scenes standing in for real ground-truth photographs.

use alloc::vec::Vec;

use rand::Rng;

use crate::mosaic::RgbImage;
use crate::rng;

/// Linear ramps: red along x, green along y, blue along the diagonal.
pub fn gradient(width: usize, height: usize) -> RgbImage {
    let sx = 1.0 / (width.max(2) - 1) as f64;
    let sy = 1.0 / (height.max(2) - 1) as f64;
    RgbImage::from_fn(width, height, |y, x| {
        let (u, v) = (x as f64 * sx, y as f64 * sy);
        [u, v, 0.5 * (u + v)]
    })
}

struct Wave {
    amp: [f64; 3],
    fx: f64,
    fy: f64,
    phase: f64,
}

struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
    soft: f64,
    color: [f64; 3],
}

/// A smooth color field (a few low-frequency waves) with soft-edged disks
/// on top. Deterministic in `seed`; values lie in [0, 1].
pub fn scene(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut r = rng::derived(seed, &[0x5CE4E]);
    let base: [f64; 3] = core::array::from_fn(|_| r.random_range(0.25..0.75));
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            amp: core::array::from_fn(|_| r.random_range(-0.15..0.15)),
            fx: r.random_range(0.5..2.5),
            fy: r.random_range(0.5..2.5),
            phase: r.random_range(0.0..core::f64::consts::TAU),
        })
        .collect();
    let disks: Vec<Disk> = (0..r.random_range(2..5))
        .map(|_| Disk {
            cx: r.random_range(0.1..0.9),
            cy: r.random_range(0.1..0.9),
            r: r.random_range(0.08..0.3),
            soft: r.random_range(0.02..0.06),
            color: core::array::from_fn(|_| r.random_range(0.05..0.95)),
        })
        .collect();
    let (fw, fh) = (width as f64, height as f64);
    RgbImage::from_fn(width, height, |y, x| {
        let (u, v) = ((x as f64 + 0.5) / fw, (y as f64 + 0.5) / fh);
        let mut px = base;
        for wv in &waves {
            let s = libm::sin(core::f64::consts::TAU * (wv.fx * u + wv.fy * v) + wv.phase);
            for c in 0..3 {
                px[c] += wv.amp[c] * s;
            }
        }
        for d in &disks {
            let dist = libm::sqrt((u - d.cx) * (u - d.cx) + (v - d.cy) * (v - d.cy));
            // logistic edge of width `soft`
            let a = 1.0 / (1.0 + libm::exp((dist - d.r) / d.soft));
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a) + d.color[c] * a;
            }
        }
        px.map(|c| c.clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_corners() {
        let g = gradient(5, 3);
        assert_eq!(g.pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(g.pixel(2, 4), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = scene(24, 16, 3);
        assert_eq!(a, scene(24, 16, 3));
        assert_ne!(a, scene(24, 16, 4));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
