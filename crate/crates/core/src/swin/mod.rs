//! Swin-Transformer U-Net mapping an H×W×1 RAW tensor to H×W×3 RGB.

mod attention;
mod config;
mod model;
mod params;
mod window;


pub use attention::{wmsa, WmsaOutput};
pub use config::{ModelConfig, Preset, StageWindow};
pub use model::{
    downsample, forward, forward_var, positional_embedding, predict, reconstruct, reflect_pad_to, swin_block,
    swin_stage, upsample, LN_EPS,
};
pub use params::{param_count, param_manifest, Init, ModelParams, ParamSpec, ParamVars, INIT_STD};
pub(crate) use window::{partition_var, reverse_var};
pub use window::{
    check_window, shift_mask, window_partition, window_partition_rect, window_reverse, window_reverse_rect,
    MASK_VALUE,
};
