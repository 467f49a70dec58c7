//! TOML run configuration. Key names follow the library's configuration
//! fields; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use evdemosaic_core::losses::LossSpec;
use evdemosaic_core::swin::{ModelConfig, Preset};
use evdemosaic_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// A fully specified [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub s: usize,
    pub channels: usize,
    pub stages: usize,
    pub depth: usize,
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub seed: u64,
}

impl From<&ModelConfig> for ModelRecord {
    fn from(c: &ModelConfig) -> Self {
        Self {
            s: c.s,
            channels: c.channels,
            stages: c.stages,
            depth: c.depth,
            window: c.window,
            heads: c.heads,
            mlp_ratio: c.mlp_ratio,
            seed: c.seed,
        }
    }
}

impl TryFrom<&ModelRecord> for ModelConfig {
    type Error = evdemosaic_core::Error;

    fn try_from(r: &ModelRecord) -> Result<Self, Self::Error> {
        let c = ModelConfig {
            s: r.s,
            channels: r.channels,
            stages: r.stages,
            depth: r.depth,
            window: r.window,
            heads: r.heads,
            mlp_ratio: r.mlp_ratio,
            seed: r.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossRecord {
    Charbonnier { eps: f64 },
    PixelFocusPower { a: f64, b: f64, g: f64 },
    PixelFocusExp { lambda: f64 },
}

impl From<LossRecord> for LossSpec {
    fn from(r: LossRecord) -> Self {
        match r {
            LossRecord::Charbonnier { eps } => LossSpec::Charbonnier { eps },
            LossRecord::PixelFocusPower { a, b, g } => LossSpec::PixelFocusPower { a, b, g },
            LossRecord::PixelFocusExp { lambda } => LossSpec::PixelFocusExp { lambda },
        }
    }
}

impl From<LossSpec> for LossRecord {
    fn from(s: LossSpec) -> Self {
        match s {
            LossSpec::Charbonnier { eps } => LossRecord::Charbonnier { eps },
            LossSpec::PixelFocusPower { a, b, g } => LossRecord::PixelFocusPower { a, b, g },
            LossSpec::PixelFocusExp { lambda } => LossRecord::PixelFocusExp { lambda },
        }
    }
}

/// `[model]`: a depth preset (default `tiny`) with optional overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub s: Option<usize>,
    pub channels: Option<usize>,
    pub stages: Option<usize>,
    pub depth: Option<usize>,
    pub window: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub seed: Option<u64>,
}

/// `[train]`: a schedule preset (`full` or `desk`, default `full`) with
/// optional overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub stage1_epochs: Option<usize>,
    pub stage2_epochs: Option<usize>,
    pub lr1_init: Option<f64>,
    pub lr2_init: Option<f64>,
    pub crop: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub stage2_loss: Option<LossRecord>,
    pub lambda_cap: Option<f64>,
    pub grad_clip: Option<f64>,
    pub val_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Tab-separated list of `.hevs` / ground-truth PNG pairs.
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Periodic checkpoint interval in epochs (0 = final checkpoint only).
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Configuration after presets, overrides and path resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigFile::default().resolve(Path::new(".")).expect("defaults are valid")
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::Usage(format!("invalid configuration: {e}")))
    }

    /// Applies presets and overrides; relative paths are taken relative to
    /// `base`.
    pub fn resolve(&self, base: &Path) -> AppResult<RunConfig> {
        let m = &self.model;
        let preset = Preset::from_name(m.preset.as_deref().unwrap_or("tiny"))?;
        let d = preset.config();
        let model = ModelConfig {
            s: m.s.unwrap_or(d.s),
            channels: m.channels.unwrap_or(d.channels),
            stages: m.stages.unwrap_or(d.stages),
            depth: m.depth.unwrap_or(d.depth),
            window: m.window.unwrap_or(d.window),
            heads: m.heads.unwrap_or(d.heads),
            mlp_ratio: m.mlp_ratio.unwrap_or(d.mlp_ratio),
            seed: m.seed.unwrap_or(d.seed),
        };
        model.validate()?;

        let t = &self.train;
        let d = match t.preset.as_deref().unwrap_or("full") {
            "full" => TrainConfig::default(),
            "desk" => TrainConfig::desk(),
            other => return Err(AppError::Usage(format!("unknown train preset {other:?} (expected full or desk)"))),
        };
        let train = TrainConfig {
            stage1_epochs: t.stage1_epochs.unwrap_or(d.stage1_epochs),
            stage2_epochs: t.stage2_epochs.unwrap_or(d.stage2_epochs),
            lr1_init: t.lr1_init.unwrap_or(d.lr1_init),
            lr2_init: t.lr2_init.unwrap_or(d.lr2_init),
            crop: t.crop.unwrap_or(d.crop),
            batch: t.batch.unwrap_or(d.batch),
            seed: t.seed.unwrap_or(d.seed),
            beta1: t.beta1.unwrap_or(d.beta1),
            beta2: t.beta2.unwrap_or(d.beta2),
            adam_eps: t.adam_eps.unwrap_or(d.adam_eps),
            stage2_loss: t.stage2_loss.map(LossSpec::from).unwrap_or(d.stage2_loss),
            lambda_cap: t.lambda_cap.unwrap_or(d.lambda_cap),
            grad_clip: t.grad_clip.or(d.grad_clip),
            val_every: t.val_every.unwrap_or(d.val_every),
        };
        train.validate()?;

        let abs = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
        Ok(RunConfig {
            model,
            train,
            manifest: abs(&self.data.manifest),
            val_manifest: abs(&self.data.val_manifest),
            out_dir: abs(&self.output.dir),
            checkpoint_every: self.output.checkpoint_every.unwrap_or(0),
        })
    }
}

pub fn load_config(path: &Path) -> AppResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ConfigFile::parse(&text).and_then(|c| c.resolve(base)).map_err(|e| e.at(path))
}
