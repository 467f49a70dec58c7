use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{NdTensor, Tape, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, 0.02) truncated at two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push(out: &mut Vec<ParamSpec>, key: String, shape: &[usize], init: Init) {
    out.push(ParamSpec {
        key,
        shape: shape.to_vec(),
        init,
    });
}

fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, w: usize, hidden: usize) {
    use Init::*;
    push(out, format!("{prefix}.norm1.weight"), &[w], Ones);
    push(out, format!("{prefix}.norm1.bias"), &[w], Zeros);
    push(out, format!("{prefix}.attn.qkv.weight"), &[w, 3 * w], TruncNormal);
    push(out, format!("{prefix}.attn.qkv.bias"), &[3 * w], Zeros);
    push(out, format!("{prefix}.attn.proj.weight"), &[w, w], TruncNormal);
    push(out, format!("{prefix}.attn.proj.bias"), &[w], Zeros);
    push(out, format!("{prefix}.norm2.weight"), &[w], Ones);
    push(out, format!("{prefix}.norm2.bias"), &[w], Zeros);
    push(out, format!("{prefix}.mlp.fc1.weight"), &[w, hidden], TruncNormal);
    push(out, format!("{prefix}.mlp.fc1.bias"), &[hidden], Zeros);
    push(out, format!("{prefix}.mlp.fc2.weight"), &[hidden, w], TruncNormal);
    push(out, format!("{prefix}.mlp.fc2.bias"), &[w], Zeros);
}

/// Every learnable tensor of the model, in initialization order.
pub fn param_manifest(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use Init::*;
    let mut out = Vec::new();
    let c = cfg.channels;
    push(&mut out, "embed.proj.weight".into(), &[cfg.s * cfg.s, c], TruncNormal);
    push(&mut out, "embed.proj.bias".into(), &[c], Zeros);
    for i in 0..cfg.stages {
        let w = cfg.stage_width(i);
        for j in 0..cfg.depth {
            block_specs(&mut out, &format!("enc.{i}.block.{j}"), w, cfg.mlp_hidden(w));
        }
        if i + 1 < cfg.stages {
            push(&mut out, format!("enc.{i}.down.weight"), &[4 * w, 2 * w], TruncNormal);
        }
    }
    for i in (0..cfg.stages - 1).rev() {
        let w = cfg.stage_width(i);
        let below = cfg.stage_width(i + 1);
        push(&mut out, format!("dec.{i}.up.weight"), &[below, 2 * below], TruncNormal);
        push(&mut out, format!("dec.{i}.fuse.weight"), &[2 * w, w], TruncNormal);
        push(&mut out, format!("dec.{i}.fuse.bias"), &[w], Zeros);
        for j in 0..cfg.depth {
            block_specs(&mut out, &format!("dec.{i}.block.{j}"), w, cfg.mlp_hidden(w));
        }
    }
    push(&mut out, "head.proj.weight".into(), &[cfg.head_channels(), 3], TruncNormal);
    push(&mut out, "head.proj.bias".into(), &[3], Zeros);
    out
}

/// Number of scalar parameters, computed from the layer formulas.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let block = |w: usize| {
        let h = cfg.mlp_hidden(w);
        let norms = 2 * 2 * w;
        let attn = w * 3 * w + 3 * w + w * w + w;
        let mlp = w * h + h + h * w + w;
        norms + attn + mlp
    };
    let c = cfg.channels;
    let mut total = cfg.s * cfg.s * c + c;
    for i in 0..cfg.stages {
        let w = cfg.stage_width(i);
        total += cfg.depth * block(w);
        if i + 1 < cfg.stages {
            // 2×2 patch merge: 4w → 2w, then the decoder's 2·(2w) expansion
            // and 2w → w skip fusion at the same level
            total += 4 * w * 2 * w;
            total += 2 * w * 2 * (2 * w);
            total += 2 * w * w + w;
            total += cfg.depth * block(w);
        }
    }
    total + cfg.head_channels() * 3 + 3
}

/// Learnable tensors keyed by canonical path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, NdTensor>,
}

impl ModelParams {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::seeded(cfg.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tensors = BTreeMap::new();
        for spec in param_manifest(cfg) {
            let t = match spec.init {
                Init::Zeros => NdTensor::zeros(&spec.shape),
                Init::Ones => NdTensor::ones(&spec.shape),
                Init::TruncNormal => NdTensor::from_fn(&spec.shape, |_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break v;
                    }
                }),
            };
            tensors.insert(spec.key, t);
        }
        Ok(Self { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, NdTensor>) -> Self {
        Self { tensors }
    }

    /// Checks that keys and shapes match the manifest of `cfg`. The error
    /// lists every missing key, then shape mismatches, then extra keys.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let manifest = param_manifest(cfg);
        let mut missing = Vec::new();
        let mut reshaped = Vec::new();
        for spec in &manifest {
            match self.tensors.get(&spec.key) {
                None => missing.push(spec.key.clone()),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    reshaped.push(format!("{} has shape {:?}, expected {:?}", spec.key, t.shape(), spec.shape))
                }
                _ => {}
            }
        }
        let extra: Vec<&str> = self
            .tensors
            .keys()
            .filter(|k| !manifest.iter().any(|s| &s.key == *k))
            .map(String::as_str)
            .collect();
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing parameters: {}", missing.join(", ")));
        }
        if !reshaped.is_empty() {
            parts.push(format!("shape mismatches: {}", reshaped.join("; ")));
        }
        if !extra.is_empty() {
            parts.push(format!("unexpected parameters: {}", extra.join(", ")));
        }
        if parts.is_empty() {
            Ok(())
        } else {
            Err(Error::Structure(parts.join("; ")))
        }
    }

    pub fn get(&self, key: &str) -> Option<&NdTensor> {
        self.tensors.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut NdTensor> {
        self.tensors.get_mut(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, t: NdTensor) -> Option<NdTensor> {
        self.tensors.insert(key.into(), t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NdTensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut NdTensor)> {
        self.tensors.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(NdTensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(NdTensor::is_finite)
    }

    /// Sets every key for which `pred` holds to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (k, t) in self.tensors.iter_mut() {
            if pred(k) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Randomizes every tensor (including biases and norms) around its
    /// current value; used to give tests a model without zero-initialized
    /// pieces.
    pub fn perturb(&mut self, seed: u64, amplitude: f64) {
        let mut r = rng::seeded(seed);
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-amplitude..amplitude);
            }
        }
    }
}

/// Parameters recorded on a tape.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn bind(tape: &mut Tape, params: &ModelParams, requires_grad: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), requires_grad)))
            .collect();
        Self { vars }
    }

    /// Binds every tensor except the keys in `replaced`, which take the
    /// given variables instead.
    pub fn bind_with(tape: &mut Tape, params: &ModelParams, requires_grad: bool, replaced: &[(&str, Var)]) -> Self {
        let mut vars = BTreeMap::new();
        for (k, t) in &params.tensors {
            let v = match replaced.iter().find(|(key, _)| key == k) {
                Some(&(_, v)) => v,
                None => tape.leaf(t.clone(), requires_grad),
            };
            vars.insert(k.clone(), v);
        }
        Self { vars }
    }

    pub fn get(&self, key: &str) -> Result<Var> {
        self.vars
            .get(key)
            .copied()
            .ok_or_else(|| Error::Structure(format!("missing parameter {key}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Collects gradients after a backward pass; parameters the loss did not
    /// reach get zeros.
    pub fn grads(&self, tape: &mut Tape) -> ModelParams {
        let tensors = self
            .vars
            .iter()
            .map(|(k, &v)| {
                let g = tape.take_grad(v).unwrap_or_else(|| NdTensor::zeros(tape.shape(v)));
                (k.clone(), g)
            })
            .collect();
        ModelParams { tensors }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swin::config::Preset;

    #[test]
    fn count_equals_manifest_sum() {
        for p in Preset::ALL {
            let cfg = p.config();
            let manifest: usize = param_manifest(&cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum();
            assert_eq!(param_count(&cfg), manifest, "{p:?}");
        }
        let odd = ModelConfig {
            s: 4,
            channels: 16,
            stages: 2,
            depth: 3,
            window: 4,
            heads: 2,
            mlp_ratio: 2.5,
            seed: 0,
        };
        let manifest: usize = param_manifest(&odd).iter().map(|s| s.shape.iter().product::<usize>()).sum();
        assert_eq!(param_count(&odd), manifest);
        assert_eq!(ModelParams::init(&odd).unwrap().scalar_count(), manifest);
    }

    #[test]
    fn count_increases_with_depth() {
        let counts: Vec<usize> = Preset::ALL.iter().map(|p| param_count(&p.config())).collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }

    #[test]
    fn init_is_deterministic_and_structured() {
        let cfg = ModelConfig {
            stages: 2,
            ..ModelConfig::default()
        };
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&ModelConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(a, c);
        a.check_against(&cfg).unwrap();
        assert!(a.get("enc.0.block.0.norm1.weight").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(a.get("enc.0.block.0.attn.qkv.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let w = a.get("enc.0.block.0.attn.qkv.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.04));
        assert!(w.data().iter().any(|&v| v != 0.0));

        let mut broken = a.clone();
        broken.tensors.remove("head.proj.bias");
        assert!(matches!(broken.check_against(&cfg), Err(Error::Structure(m)) if m.contains("head.proj.bias")));
    }
}
