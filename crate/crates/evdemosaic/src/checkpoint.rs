//! Binary checkpoints.
//!
//! Layout: the 8 magic bytes `EVDMCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, the UTF-8 JSON header, then the
//! payload of little-endian `f64` values. Each header tensor entry gives
//! its group (`param`, `adam_m` or `adam_v`), key, shape and byte offset
//! into the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use evdemosaic_core::swin::{ModelConfig, ModelParams};
use evdemosaic_core::train::{OptimizerState, TrainState};
use evdemosaic_core::NdTensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelRecord;
use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 8] = b"EVDMCKPT";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

const GROUPS: [&str; 3] = ["param", "adam_m", "adam_v"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    group: String,
    key: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelRecord,
    seed: u64,
    stage: u8,
    stage_step: u64,
    global_step: u64,
    adam_step: u64,
    payload_bytes: u64,
    tensors: Vec<TensorEntry>,
}

/// Model configuration, training seed and full training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub seed: u64,
    pub state: TrainState,
}

impl Checkpoint {
    /// A checkpoint of bare parameters with fresh optimizer state.
    pub fn from_params(model: ModelConfig, seed: u64, params: ModelParams) -> Self {
        Self {
            model,
            seed,
            state: TrainState::fresh(params),
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> AppResult<Vec<u8>> {
    let st = &ck.state;
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (group, set) in GROUPS.iter().zip([&st.params, &st.opt.m, &st.opt.v]) {
        for (key, t) in set.iter() {
            entries.push(TensorEntry {
                group: group.to_string(),
                key: key.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = Header {
        model: ModelRecord::from(&ck.model),
        seed: ck.seed,
        stage: st.stage,
        stage_step: st.stage_step,
        global_step: st.global_step,
        adam_step: st.opt.step,
        payload_bytes: payload.len() as u64,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| AppError::Internal(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn corrupt(offset: usize, detail: impl std::fmt::Display) -> AppError {
    AppError::Data(format!("checkpoint corrupt at byte {offset}: {detail}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> AppResult<Checkpoint> {
    if bytes.len() < PREFIX {
        return Err(corrupt(bytes.len(), format!("expected at least {PREFIX} bytes, got {}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt(0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(8, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = PREFIX.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt(12, "header runs past the end"))?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX..body]).map_err(|e| corrupt(PREFIX, e))?;
    let payload = &bytes[body..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(corrupt(
            body,
            format!("expected {} payload bytes, got {}", header.payload_bytes, payload.len()),
        ));
    }

    let mut groups: [BTreeMap<String, NdTensor>; 3] = Default::default();
    for e in &header.tensors {
        let g = GROUPS
            .iter()
            .position(|&g| g == e.group)
            .ok_or_else(|| corrupt(PREFIX, format!("unknown tensor group {:?}", e.group)))?;
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start
            .checked_add(n * 8)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| corrupt(body + start, format!("tensor {} runs past the payload", e.key)))?;
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        groups[g].insert(e.key.clone(), NdTensor::new(e.shape.clone(), data)?);
    }
    let [params, m, v] = groups;
    let params = ModelParams::from_map(params);
    let (m, v) = (ModelParams::from_map(m), ModelParams::from_map(v));
    let model = ModelConfig::try_from(&header.model)?;
    Ok(Checkpoint {
        model,
        seed: header.seed,
        state: TrainState {
            params,
            opt: OptimizerState {
                step: header.adam_step,
                m,
                v,
            },
            stage: header.stage,
            stage_step: header.stage_step,
            global_step: header.global_step,
        },
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> AppResult<()> {
    let bytes = encode_checkpoint(ck)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.at(path))
}
