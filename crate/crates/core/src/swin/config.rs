use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Architecture hyperparameters of the Swin U-Net.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Space-to-depth factor applied to the RAW input.
    pub s: usize,
    /// Feature width of the first stage; stage `i` has `C·2^i` channels.
    pub channels: usize,
    pub stages: usize,
    /// Swin blocks per stage (encoder and decoder alike).
    pub depth: usize,
    /// Attention window side in feature pixels.
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub seed: u64,
}

/// Depth presets of the model-size ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Medium,
    Large,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Tiny, Preset::Small, Preset::Medium, Preset::Large];

    pub fn depth(self) -> usize {
        match self {
            Preset::Tiny => 2,
            Preset::Small => 4,
            Preset::Medium => 6,
            Preset::Large => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Medium => "medium",
            Preset::Large => "large",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Param(format!("unknown preset {name:?}")))
    }

    pub fn config(self) -> ModelConfig {
        ModelConfig {
            depth: self.depth(),
            ..ModelConfig::default()
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            s: 2,
            channels: 32,
            stages: 4,
            depth: 2,
            window: 8,
            heads: 4,
            mlp_ratio: 4.0,
            seed: 0,
        }
    }
}

/// Windowing of one stage's feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageWindow {
    pub win_h: usize,
    pub win_w: usize,
    /// Shift used by the odd (shifted) blocks; zero along an axis covered
    /// by a single window.
    pub shift_h: usize,
    pub shift_w: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Param(m));
        if self.s == 0 {
            return fail("space-to-depth factor s must be >= 1".into());
        }
        if self.stages == 0 || self.depth == 0 {
            return fail(format!("stages ({}) and depth ({}) must be >= 1", self.stages, self.depth));
        }
        if self.window < 2 {
            return fail(format!("window must be >= 2, got {}", self.window));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return fail(format!("C = {} is not divisible by heads = {}", self.channels, self.heads));
        }
        if self.channels % 2 != 0 {
            return fail(format!("C = {} must be even for the positional embedding", self.channels));
        }
        if self.channels % (self.s * self.s) != 0 {
            return fail(format!("C = {} must be divisible by s² = {}", self.channels, self.s * self.s));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return fail(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.channels << stage
    }

    pub fn mlp_hidden(&self, width: usize) -> usize {
        (libm::round(self.mlp_ratio * width as f64) as usize).max(1)
    }

    pub fn head_channels(&self) -> usize {
        self.channels / (self.s * self.s)
    }

    /// Total downscaling between input pixels and the deepest stage.
    pub fn spatial_multiple(&self) -> usize {
        self.s << (self.stages - 1)
    }

    /// Window actually used on a `h × w` feature map: the configured window,
    /// shrunk to the map when the map is smaller. Shifting is disabled along
    /// an axis that fits in one window.
    pub fn stage_window(&self, h: usize, w: usize) -> StageWindow {
        let win_h = self.window.min(h).max(1);
        let win_w = self.window.min(w).max(1);
        StageWindow {
            win_h,
            win_w,
            shift_h: if win_h < h { win_h / 2 } else { 0 },
            shift_w: if win_w < w { win_w / 2 } else { 0 },
        }
    }

    fn axis_ok(&self, n: usize) -> bool {
        let m = self.spatial_multiple();
        if n == 0 || n % m != 0 {
            return false;
        }
        (0..self.stages).all(|i| {
            let d = n / (self.s << i);
            d % self.window.min(d) == 0
        })
    }

    /// Checks that an H×W input can run through every stage without padding.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for (name, n) in [("height", h), ("width", w)] {
            if !self.axis_ok(n) {
                return Err(Error::Dimension(format!(
                    "input {name} {n} must be a multiple of {} with every stage divisible by its window",
                    self.spatial_multiple()
                )));
            }
        }
        Ok(())
    }

    /// Smallest valid extent >= `n`.
    pub fn padded_extent(&self, n: usize) -> usize {
        let m = self.spatial_multiple();
        let mut p = n.max(1).div_ceil(m) * m;
        while !self.axis_ok(p) {
            p += m;
        }
        p
    }

    /// Extents of every stage for an H×W input.
    pub fn stage_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        (0..self.stages).map(|i| (h / (self.s << i), w / (self.s << i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_map_to_depths() {
        let depths: Vec<usize> = Preset::ALL.iter().map(|p| p.config().depth).collect();
        assert_eq!(depths, [2, 4, 6, 8]);
        assert_eq!(Preset::from_name("Medium").unwrap(), Preset::Medium);
    }

    #[test]
    fn validation() {
        ModelConfig::default().validate().unwrap();
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.stages = 0));
        assert!(bad(|c| c.depth = 0));
        assert!(bad(|c| c.heads = 3));
        assert!(bad(|c| c.window = 1));
        assert!(bad(|c| c.channels = 30));
    }

    #[test]
    fn input_divisibility() {
        let c = ModelConfig::default();
        c.check_input(64, 64).unwrap();
        c.check_input(16, 32).unwrap();
        assert!(c.check_input(24, 16).is_err());
        // 48 → stage extents 24, 12, 6, 3: window 8 does not divide 12
        assert!(c.check_input(48, 48).is_err());
        assert_eq!(c.padded_extent(48), 64);
        assert_eq!(c.padded_extent(1), 16);
        assert_eq!(c.padded_extent(128), 128);
        let sw = c.stage_window(32, 32);
        assert_eq!((sw.win_h, sw.shift_h), (8, 4));
        let sw = c.stage_window(8, 4);
        assert_eq!((sw.win_h, sw.shift_h, sw.win_w, sw.shift_w), (8, 0, 4, 0));
    }
}
