//! A tiny rasterizer for line charts and bar histograms. Charts carry no
//! text; the CSV next to each PNG holds the numbers.

use std::path::Path;

use crate::error::AppResult;
use crate::io::write_rgb8;

pub type Color = [u8; 3];

pub const WHITE: Color = [255, 255, 255];
pub const AXIS: Color = [60, 60, 60];
pub const GRID: Color = [225, 225, 225];
pub const PALETTE: [Color; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [140, 86, 75]];

const MARGIN: usize = 24;

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, bg: Color) -> Self {
        Self {
            width,
            height,
            pixels: bg.repeat(width * height),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Color {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.pixels[i..i + 3].copy_from_slice(&c);
        }
    }

    /// Bresenham segment.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Color) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y, c);
            }
        }
    }

    pub fn save(self, path: &Path) -> AppResult<()> {
        write_rgb8(self.width, self.height, self.pixels, path)
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    w: usize,
    h: usize,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let pw = (self.w - 2 * MARGIN) as f64;
        let ph = (self.h - 2 * MARGIN) as f64;
        let u = if self.x1 > self.x0 { (x - self.x0) / (self.x1 - self.x0) } else { 0.5 };
        let v = if self.y1 > self.y0 { (y - self.y0) / (self.y1 - self.y0) } else { 0.5 };
        ((MARGIN as f64 + u * pw).round() as i64, (self.h as f64 - MARGIN as f64 - v * ph).round() as i64)
    }
}

fn axes(c: &mut Canvas, f: &Frame) {
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (gx, _) = f.px(f.x0 + t * (f.x1 - f.x0), f.y0);
        let (_, gy) = f.px(f.x0, f.y0 + t * (f.y1 - f.y0));
        c.line((gx, MARGIN as i64), (gx, (f.h - MARGIN) as i64), GRID);
        c.line((MARGIN as i64, gy), ((f.w - MARGIN) as i64, gy), GRID);
    }
    let (ox, oy) = (MARGIN as i64, (f.h - MARGIN) as i64);
    c.line((ox, oy), ((f.w - MARGIN) as i64, oy), AXIS);
    c.line((ox, oy), (ox, MARGIN as i64), AXIS);
}

/// Polylines over the common bounding box of all series.
pub fn line_chart(series: &[Vec<(f64, f64)>], width: usize, height: usize) -> Canvas {
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let frame = Frame { x0, x1, y0, y1, w: width, h: height };
    let mut c = Canvas::new(width, height, WHITE);
    axes(&mut c, &frame);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| frame.px(x, y)).collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color);
        }
        if let [p] = pts[..] {
            c.set(p.0, p.1, color);
        }
    }
    c
}

/// One bar per value, heights relative to the largest.
pub fn bar_chart(values: &[f64], width: usize, height: usize) -> Canvas {
    let top = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let frame = Frame {
        x0: 0.0,
        x1: values.len().max(1) as f64,
        y0: 0.0,
        y1: if top > 0.0 { top } else { 1.0 },
        w: width,
        h: height,
    };
    let mut c = Canvas::new(width, height, WHITE);
    axes(&mut c, &frame);
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 && v.is_finite() {
            let (xa, ya) = frame.px(i as f64, v);
            let (xb, yb) = frame.px((i + 1) as f64, 0.0);
            c.fill_rect(xa + 1, ya, (xb - 1).max(xa + 1), yb - 1, PALETTE[0]);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_hits_both_endpoints() {
        let mut c = Canvas::new(10, 10, WHITE);
        c.line((1, 2), (8, 7), AXIS);
        assert_eq!(c.get(1, 2), AXIS);
        assert_eq!(c.get(8, 7), AXIS);
        assert_eq!(c.get(0, 9), WHITE);
    }

    #[test]
    fn bar_heights_scale_with_values() {
        let c = bar_chart(&[1.0, 0.0, 2.0], 120, 100);
        let col = |x: usize| (0..100).filter(|&y| c.get(x, y) == PALETTE[0]).count();
        let inner = 120 - 2 * MARGIN;
        let centers: Vec<usize> = (0..3).map(|i| MARGIN + inner * (2 * i + 1) / 6).collect();
        let hs: Vec<usize> = centers.iter().map(|&x| col(x)).collect();
        assert_eq!(hs[1], 0);
        assert!(hs[2] > hs[0] && hs[0] > 0);
    }
}
