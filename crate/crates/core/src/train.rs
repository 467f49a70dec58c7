//! Two-stage training: Charbonnier pre-training, then fine-tuning with a
//! configurable loss, each stage with its own cosine learning-rate decay.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{LossSpec, DEFAULT_LAMBDA_CAP};
use crate::metrics::MetricsReport;
use crate::mosaic::{raw_to_tensor, CfaPattern, RawImage, RgbImage};
use crate::rng;
use crate::swin::{forward_var, reconstruct, ModelConfig, ModelParams, ParamVars};
use crate::tensor::Tape;

/// `lr_init · 0.5 · (1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_init: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Param(format!("cosine_lr: step {step} outside [0, {total_steps}]")));
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_init * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t)))
}

/// Top-left `(x, y)` of a random `crop × crop` window in a `width × height`
/// frame, on multiples of the CFA tile so the pattern phase is kept.
pub fn crop_offsets<R: Rng + ?Sized>(width: usize, height: usize, crop: usize, pattern: &CfaPattern, rng: &mut R) -> Result<(usize, usize)> {
    let (th, tw) = (pattern.tile_h(), pattern.tile_w());
    if crop == 0 || crop % th != 0 || crop % tw != 0 {
        return Err(Error::Param(format!("crop {crop} must be a positive multiple of the {th}x{tw} tile")));
    }
    if width < crop || height < crop {
        return Err(Error::Data(format!("image {width}x{height} is smaller than crop {crop}")));
    }
    let x0 = rng.random_range(0..=(width - crop) / tw) * tw;
    let y0 = rng.random_range(0..=(height - crop) / th) * th;
    Ok((x0, y0))
}

/// Co-located crops of a RAW frame and its ground truth at
/// [`crop_offsets`].
pub fn random_crop<R: Rng + ?Sized>(raw: &RawImage, gt: &RgbImage, crop: usize, pattern: &CfaPattern, rng: &mut R) -> Result<(RawImage, RgbImage)> {
    if (raw.width, raw.height) != (gt.width, gt.height) {
        return Err(Error::Data(format!(
            "RAW is {}x{} but ground truth is {}x{}",
            raw.width, raw.height, gt.width, gt.height
        )));
    }
    let (x0, y0) = crop_offsets(raw.width, raw.height, crop, pattern, rng)?;
    Ok((raw.crop(x0, y0, crop, crop)?, gt.crop(x0, y0, crop, crop)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = params.clone();
        m.zero_where(|_| true);
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

fn same_keys(a: &ModelParams, b: &ModelParams, what: &str) -> Result<()> {
    let ok = a.len() == b.len() && a.iter().zip(b.iter()).all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape());
    if ok {
        Ok(())
    } else {
        let missing: Vec<&str> = a.keys().filter(|k| b.get(k).is_none()).map(String::as_str).collect();
        Err(Error::Structure(format!("{what} do not match the parameters; missing: {}", missing.join(", "))))
    }
}

/// One bias-corrected adaptive-moment update.
pub fn optimizer_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, lr: f64, hyper: &AdamHyper) -> Result<()> {
    same_keys(params, grads, "gradients")?;
    same_keys(params, &state.m, "optimizer moments")?;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(hyper.beta1, t);
    let c2 = 1.0 - libm::pow(hyper.beta2, t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (libm::sqrt(vhat) + hyper.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr1_init: f64,
    pub lr2_init: f64,
    pub crop: usize,
    pub batch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub stage2_loss: LossSpec,
    /// Upper bound accepted for the exponential loss's λ.
    pub lambda_cap: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Validate every n epochs (0 = never).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 500,
            stage2_epochs: 200,
            lr1_init: 1e-4,
            lr2_init: 1e-5,
            crop: 640,
            batch: 1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            stage2_loss: LossSpec::PixelFocusExp { lambda: 1.1 },
            lambda_cap: DEFAULT_LAMBDA_CAP,
            grad_clip: None,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small schedule for CPU runs on synthetic data.
    pub fn desk() -> Self {
        Self {
            stage1_epochs: 30,
            stage2_epochs: 10,
            lr1_init: 5e-4,
            lr2_init: 5e-5,
            crop: 32,
            ..Self::default()
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch != 1 {
            return Err(Error::Param(format!("batch must be 1, got {}", self.batch)));
        }
        for (name, lr) in [("lr1_init", self.lr1_init), ("lr2_init", self.lr2_init)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Param(format!("{name} must be a finite non-negative number, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Param("beta1, beta2 must lie in [0, 1) and adam_eps must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Param(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.stage2_loss.validate(self.lambda_cap)
    }
}

/// A RAW frame with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub raw: RawImage,
    pub gt: RgbImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Global step index, counted across both stages.
    pub step: u64,
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Where a (possibly interrupted) run stands.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptimizerState,
    /// 1 or 2.
    pub stage: u8,
    /// Steps completed in the current stage.
    pub stage_step: u64,
    /// Steps completed overall.
    pub global_step: u64,
}

impl TrainState {
    pub fn fresh(params: ModelParams) -> Self {
        Self {
            opt: OptimizerState::new(&params),
            params,
            stage: 1,
            stage_step: 0,
            global_step: 0,
        }
    }
}

/// Hooks for checkpointing and logging. Returning an error aborts training.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord, _state: &TrainState) -> Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _stage: u8, _epoch: usize, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Everything a stage needs besides the mutable state.
pub struct StageSpec<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub data: &'a [TrainSample],
    pub val: &'a [TrainSample],
    pub loss: LossSpec,
    pub stage: u8,
    pub epochs: usize,
    pub lr_init: f64,
}

fn sample_order(n: usize, seed: u64, stage: u8, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::derived(seed, &[stage as u64, epoch as u64, 0]);
    order.shuffle(&mut r);
    order
}

fn global_norm(grads: &ModelParams) -> f64 {
    libm::sqrt(grads.iter().flat_map(|(_, g)| g.data().iter()).map(|v| v * v).sum())
}

/// Loss and gradients for one sample.
pub fn loss_and_grads(params: &ModelParams, model: &ModelConfig, raw: &RawImage, gt: &RgbImage, loss: &LossSpec) -> Result<(f64, ModelParams)> {
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params, true);
    let x = tape.constant(raw_to_tensor(raw).tensor);
    let y = forward_var(&mut tape, x, &pv, model)?;
    let g = tape.constant(gt.to_tensor());
    let l = loss.apply(&mut tape, y, g)?;
    let value = tape.value(l).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    tape.backward(l)?;
    Ok((value, pv.grads(&mut tape)))
}

/// Mean PSNR/SSIM of full-frame reconstructions.
pub fn validate(params: &ModelParams, model: &ModelConfig, val: &[TrainSample]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for s in val {
        let pred = reconstruct(&s.raw, params, model)?;
        report.evaluate(s.id.clone(), &pred, &s.gt)?;
    }
    Ok(report)
}

/// Runs (or continues) one stage from `state.stage_step`. Records every
/// step in `history`; a non-finite loss or gradient is recorded and ends
/// the run with [`Error::Diverged`].
pub fn train_stage(state: &mut TrainState, spec: &StageSpec<'_>, history: &mut TrainHistory, observer: &mut dyn TrainObserver) -> Result<()> {
    spec.train.validate()?;
    spec.model.validate()?;
    if spec.data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let n = spec.data.len();
    let total = (spec.epochs * n) as u64;
    let hyper = spec.train.hyper();
    let patterns: Vec<CfaPattern> = spec
        .data
        .iter()
        .map(|s| CfaPattern::by_id(&s.raw.pattern_id))
        .collect::<Result<_>>()?;

    while state.stage_step < total {
        let epoch = (state.stage_step / n as u64) as usize;
        let order = sample_order(n, spec.train.seed, spec.stage, epoch);
        let idx = order[(state.stage_step % n as u64) as usize];
        let sample = &spec.data[idx];
        let mut crop_rng = rng::derived(spec.train.seed, &[spec.stage as u64, state.stage_step, 1]);
        let (raw, gt) = random_crop(&sample.raw, &sample.gt, spec.train.crop, &patterns[idx], &mut crop_rng)?;

        let lr = cosine_lr(state.stage_step, total, spec.lr_init)?;
        let mut record = StepRecord {
            step: state.global_step,
            stage: spec.stage,
            epoch,
            lr,
            loss: f64::NAN,
            grad_norm: f64::NAN,
        };
        let (loss, mut grads) = match loss_and_grads(&state.params, spec.model, &raw, &gt, &spec.loss) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                history.steps.push(record);
                return Err(Error::Diverged { step: state.global_step });
            }
            Err(e) => return Err(e),
        };
        let norm = global_norm(&grads);
        record.loss = loss;
        record.grad_norm = norm;
        if !norm.is_finite() {
            history.steps.push(record);
            return Err(Error::Diverged { step: state.global_step });
        }
        if let Some(clip) = spec.train.grad_clip {
            if norm > clip {
                let k = clip / norm;
                for (_, g) in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        optimizer_step(&mut state.params, &grads, &mut state.opt, lr, &hyper)?;
        if !state.params.is_finite() {
            history.steps.push(record);
            return Err(Error::Diverged { step: state.global_step });
        }
        state.stage_step += 1;
        state.global_step += 1;
        history.steps.push(record);
        observer.on_step(&record, state)?;

        if state.stage_step % n as u64 == 0 {
            let every = spec.train.val_every;
            if every > 0 && !spec.val.is_empty() && (epoch + 1) % every == 0 {
                let r = validate(&state.params, spec.model, spec.val)?;
                history.epochs.push(EpochRecord {
                    stage: spec.stage,
                    epoch,
                    val_psnr: r.mean_psnr(),
                    val_ssim: r.mean_ssim(),
                });
            }
            observer.on_epoch_end(spec.stage, epoch, state)?;
        }
    }
    Ok(())
}

/// Continues a two-stage run from `state`. Stage 2 starts from the
/// stage-1 parameters with fresh optimizer moments.
pub fn resume_two_stage(
    state: &mut TrainState,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &[TrainSample],
    val: &[TrainSample],
    history: &mut TrainHistory,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    let stage_spec = |stage: u8| StageSpec {
        model,
        train,
        data,
        val,
        loss: if stage == 1 { LossSpec::default() } else { train.stage2_loss },
        stage,
        epochs: if stage == 1 { train.stage1_epochs } else { train.stage2_epochs },
        lr_init: if stage == 1 { train.lr1_init } else { train.lr2_init },
    };
    if state.stage == 1 {
        train_stage(state, &stage_spec(1), history, observer)?;
        state.stage = 2;
        state.stage_step = 0;
        state.opt = OptimizerState::new(&state.params);
    }
    if state.stage != 2 {
        return Err(Error::State(format!("unknown training stage {}", state.stage)));
    }
    train_stage(state, &stage_spec(2), history, observer)
}

/// Charbonnier pre-training followed by fine-tuning with
/// `train.stage2_loss`.
pub fn two_stage_train(
    params: ModelParams,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &[TrainSample],
    val: &[TrainSample],
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParams, TrainHistory)> {
    let mut state = TrainState::fresh(params);
    let mut history = TrainHistory::default();
    resume_two_stage(&mut state, model, train, data, val, &mut history, observer)?;
    Ok((state.params, history))
}
