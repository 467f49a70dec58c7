//! The subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use evdemosaic_core::gradcheck::{run_suite, CheckItem, SuiteConfig};
use evdemosaic_core::losses::{difference_histogram, loss_curve_samples, loss_curve_samples_in, LossSpec, DEFAULT_LAMBDA_CAP};
use evdemosaic_core::metrics::{psnr, ssim};
use evdemosaic_core::mosaic::{bilinear_demosaic, mosaic, CfaPattern};
use evdemosaic_core::swin::{reconstruct, ModelConfig, ModelParams};
use evdemosaic_core::synth;
use evdemosaic_core::train::{resume_two_stage, StepRecord, TrainHistory, TrainObserver, TrainState};
use evdemosaic_core::Error as CoreError;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::io::{read_png, write_difference_map, write_hevs, write_png, BitDepth};
use crate::manifest::{load_samples, write_manifest, MANIFEST_NAME};
use crate::plot::{bar_chart, line_chart};
use crate::report::{read_history, write_histogram, write_loss_curves, write_metrics, write_train_history, CurveGroup, MetricsRow};

fn create_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

// ---- simulate -------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum SimulateSource {
    /// Every `*.png` in a directory, in file-name order.
    Dir(PathBuf),
    /// `count` procedural scenes of `size × size` pixels.
    Synthetic { count: usize, size: usize },
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub source: SimulateSource,
    pub out: PathBuf,
    pub pattern: String,
    pub white_level: u16,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub written: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

fn list_pngs(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Writes `<stem>.hevs`, the ground truth as `<stem>.png` and a manifest.
pub fn simulate(args: &SimulateArgs) -> AppResult<SimulateSummary> {
    let pattern = CfaPattern::by_id(&args.pattern)?;
    let inputs: Vec<(String, AppResult<_>)> = match &args.source {
        SimulateSource::Dir(dir) => {
            let files = list_pngs(dir)?;
            if files.is_empty() {
                return Err(AppError::Data(format!("no inputs: {} contains no PNG files", dir.display())));
            }
            files
                .into_iter()
                .map(|p| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    (stem, read_png(&p))
                })
                .collect()
        }
        SimulateSource::Synthetic { count, size } => {
            if *count == 0 {
                return Err(AppError::Data("no inputs: synthetic count is zero".into()));
            }
            (0..*count)
                .map(|i| (format!("scene_{i:04}"), Ok(synth::scene(*size, *size, args.seed.wrapping_add(i as u64)))))
                .collect()
        }
    };
    create_dir(&args.out)?;
    let mut summary = SimulateSummary {
        written: Vec::new(),
        skipped: Vec::new(),
    };
    let mut rows = Vec::new();
    for (stem, img) in inputs {
        let raw = img.and_then(|img| Ok((mosaic(&img, &pattern, args.white_level)?, img)));
        let (raw, img) = match raw {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping {stem}: {e}");
                summary.skipped.push((stem, e.to_string()));
                continue;
            }
        };
        let (raw_name, gt_name) = (format!("{stem}.hevs"), format!("{stem}.png"));
        write_hevs(&raw, &args.out.join(&raw_name))?;
        write_png(&img, &args.out.join(&gt_name), BitDepth::Sixteen)?;
        rows.push((raw_name, gt_name));
        summary.written.push(stem);
    }
    if rows.is_empty() {
        return Err(AppError::Data(format!("all {} inputs failed", summary.skipped.len())));
    }
    write_manifest(&args.out.join(MANIFEST_NAME), &rows)?;
    Ok(summary)
}

// ---- train ----------------------------------------------------------------

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn periodic_checkpoint_name(stage: u8, epochs_done: usize) -> String {
    format!("stage{stage}_epoch{epochs_done:04}.ckpt")
}

struct RunObserver<'a> {
    out: &'a Path,
    cfg: &'a RunConfig,
    model: &'a ModelConfig,
    steps: Vec<StepRecord>,
    failure: Option<AppError>,
}

impl RunObserver<'_> {
    fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            seed: self.cfg.train.seed,
            state: state.clone(),
        }
    }

    fn epoch_end(&mut self, stage: u8, epoch: usize, state: &TrainState) -> AppResult<()> {
        let done = epoch + 1;
        log::info!(
            "stage {stage} epoch {done}: loss {:.6}",
            self.steps.last().map_or(f64::NAN, |r| r.loss)
        );
        if stage == 1 && done == self.cfg.train.stage1_epochs {
            save_checkpoint(&self.checkpoint(state), &self.out.join(STAGE1_CHECKPOINT))?;
        }
        let every = self.cfg.checkpoint_every;
        if every > 0 && done % every == 0 {
            let dir = self.out.join(CHECKPOINT_DIR);
            create_dir(&dir)?;
            save_checkpoint(&self.checkpoint(state), &dir.join(periodic_checkpoint_name(stage, done)))?;
            crate::report::write_history(&self.out.join("history.csv"), &self.steps)?;
        }
        Ok(())
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_step(&mut self, record: &StepRecord, _: &TrainState) -> evdemosaic_core::Result<()> {
        self.steps.push(*record);
        log::debug!("step {} lr {:.3e} loss {:.6}", record.step, record.lr, record.loss);
        Ok(())
    }

    fn on_epoch_end(&mut self, stage: u8, epoch: usize, state: &TrainState) -> evdemosaic_core::Result<()> {
        self.epoch_end(stage, epoch, state).map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            CoreError::State(msg)
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub config: RunConfig,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub history: TrainHistory,
}

/// Two-stage training driven by a run configuration. With `resume`, the
/// run continues from the checkpoint and keeps the rows of an existing
/// `history.csv` in `out` that precede it.
pub fn train(args: &TrainArgs) -> AppResult<TrainSummary> {
    let cfg = &args.config;
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| AppError::Usage("configuration has no [data] manifest".into()))?;
    let data = load_samples(manifest)?;
    let val = match &cfg.val_manifest {
        Some(p) => load_samples(p)?,
        None => Vec::new(),
    };
    create_dir(&args.out)?;

    let (model, mut state, prior) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.model != cfg.model {
                log::warn!("checkpoint model configuration differs from the config file; using the checkpoint's");
            }
            ck.state.params.check_against(&ck.model)?;
            let hist = args.out.join("history.csv");
            let mut prior = if hist.exists() { read_history(&hist)? } else { Vec::new() };
            prior.retain(|r| r.step < ck.state.global_step);
            if !prior.is_empty() && prior.len() as u64 != ck.state.global_step {
                log::warn!("history.csv holds {} of the {} steps before the checkpoint", prior.len(), ck.state.global_step);
            }
            log::info!("resuming at stage {} step {}", ck.state.stage, ck.state.global_step);
            (ck.model, ck.state, prior)
        }
        None => (cfg.model.clone(), TrainState::fresh(ModelParams::init(&cfg.model)?), Vec::new()),
    };

    let mut history = TrainHistory {
        steps: prior.clone(),
        epochs: Vec::new(),
    };
    let mut obs = RunObserver {
        out: &args.out,
        cfg,
        model: &model,
        steps: prior,
        failure: None,
    };
    let result = resume_two_stage(&mut state, &model, &cfg.train, &data, &val, &mut history, &mut obs);
    let failure = obs.failure.take();
    write_train_history(&args.out, &history)?;
    match (result, failure) {
        (Ok(()), _) => {}
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e.into()),
    }
    let final_checkpoint = args.out.join(FINAL_CHECKPOINT);
    save_checkpoint(
        &Checkpoint {
            model,
            seed: cfg.train.seed,
            state,
        },
        &final_checkpoint,
    )?;
    Ok(TrainSummary { final_checkpoint, history })
}

// ---- eval -----------------------------------------------------------------

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub baseline: bool,
    /// Model configuration the checkpoint must match; defaults to the one
    /// stored in it.
    pub model: Option<ModelConfig>,
}

/// Reconstructions, difference maps, histograms and `metrics.csv`.
pub fn eval(args: &EvalArgs) -> AppResult<Vec<MetricsRow>> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let model = args.model.clone().unwrap_or_else(|| ck.model.clone());
    ck.state.params.check_against(&model).map_err(|e| AppError::from(e).at(&args.checkpoint))?;
    let samples = load_samples(&args.manifest)?;
    if samples.is_empty() {
        return Err(AppError::Data(format!("{}: no pairs listed", args.manifest.display())));
    }
    let dirs = ["recon", "diff", "hist"].map(|d| args.out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    if args.baseline {
        create_dir(&args.out.join("baseline"))?;
    }
    let mut rows = Vec::new();
    for s in &samples {
        let pred = reconstruct(&s.raw, &ck.state.params, &model)?;
        write_png(&pred, &dirs[0].join(format!("{}.png", s.id)), BitDepth::Sixteen)?;
        let (hist, map) = difference_histogram(&pred, &s.gt, HISTOGRAM_BINS)?;
        write_difference_map(&map, &dirs[1].join(format!("{}.png", s.id)))?;
        write_histogram(&dirs[2].join(format!("{}.csv", s.id)), &hist)?;
        bar_chart(&hist.fractions(), 400, 240).save(&dirs[2].join(format!("{}.png", s.id)))?;
        let baseline = if args.baseline {
            let pattern = CfaPattern::by_id(&s.raw.pattern_id)?;
            let b = bilinear_demosaic(&s.raw, &pattern);
            write_png(&b, &args.out.join("baseline").join(format!("{}.png", s.id)), BitDepth::Sixteen)?;
            Some((psnr(&b, &s.gt)?, ssim(&b, &s.gt)?))
        } else {
            None
        };
        let row = MetricsRow {
            id: s.id.clone(),
            psnr: psnr(&pred, &s.gt)?,
            ssim: ssim(&pred, &s.gt)?,
            baseline,
        };
        log::info!("{}: PSNR {:.3} dB SSIM {:.4}", row.id, row.psnr, row.ssim);
        rows.push(row);
    }
    write_metrics(&args.out.join("metrics.csv"), &rows)?;
    Ok(rows)
}

// ---- losscurves -----------------------------------------------------------

pub const ZOOM_HI: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct LossCurveArgs {
    pub specs: Vec<LossSpec>,
    pub points: usize,
    pub zoom_points: usize,
    pub out: PathBuf,
}

/// Charbonnier and both Pixel-Focus forms at their default settings.
pub fn default_curve_specs() -> Vec<LossSpec> {
    vec![
        LossSpec::default(),
        LossSpec::pixel_focus_power_default(),
        LossSpec::PixelFocusExp { lambda: 1.1 },
    ]
}

/// `loss_curves.csv` plus value, gradient and zoomed-value charts.
pub fn losscurves(args: &LossCurveArgs) -> AppResult<()> {
    if args.specs.is_empty() {
        return Err(AppError::Usage("at least one loss spec is required".into()));
    }
    let mut groups = Vec::new();
    for spec in &args.specs {
        spec.validate(DEFAULT_LAMBDA_CAP)?;
        groups.push(CurveGroup {
            spec: *spec,
            range: "full",
            samples: loss_curve_samples(spec, args.points)?,
        });
        groups.push(CurveGroup {
            spec: *spec,
            range: "zoom",
            samples: loss_curve_samples_in(spec, args.zoom_points, 0.0, ZOOM_HI)?,
        });
    }
    create_dir(&args.out)?;
    write_loss_curves(&args.out.join("loss_curves.csv"), &groups)?;
    let series = |range: &str, grad: bool| -> Vec<Vec<(f64, f64)>> {
        groups
            .iter()
            .filter(|g| g.range == range)
            .map(|g| g.samples.iter().map(|s| (s.d, if grad { s.gradient } else { s.value })).collect())
            .collect()
    };
    line_chart(&series("full", false), 480, 320).save(&args.out.join("loss_curves.png"))?;
    line_chart(&series("full", true), 480, 320).save(&args.out.join("loss_gradients.png"))?;
    line_chart(&series("zoom", false), 480, 320).save(&args.out.join("loss_curves_zoom.png"))?;
    Ok(())
}

/// Parses `charbonnier[:eps=E]`, `pf_power[:a=A,b=B,g=G]` or
/// `pf_exp[:lambda=L]`; omitted values take their defaults.
pub fn parse_loss_spec(text: &str) -> AppResult<LossSpec> {
    let (name, params) = text.split_once(':').unwrap_or((text, ""));
    let mut spec = match name.trim() {
        "charbonnier" => LossSpec::default(),
        "pf_power" => LossSpec::pixel_focus_power_default(),
        "pf_exp" => LossSpec::PixelFocusExp { lambda: 1.1 },
        other => {
            return Err(AppError::Usage(format!(
                "unknown loss {other:?} (expected charbonnier, pf_power or pf_exp)"
            )))
        }
    };
    for kv in params.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("expected key=value in loss spec, got {kv:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| AppError::Usage(format!("not a number in loss spec: {v:?}")))?;
        let slot = match (&mut spec, k.trim()) {
            (LossSpec::Charbonnier { eps }, "eps") => eps,
            (LossSpec::PixelFocusPower { a, .. }, "a") => a,
            (LossSpec::PixelFocusPower { b, .. }, "b") => b,
            (LossSpec::PixelFocusPower { g, .. }, "g") => g,
            (LossSpec::PixelFocusExp { lambda }, "lambda") => lambda,
            (_, k) => return Err(AppError::Usage(format!("loss {name} has no parameter {k:?}"))),
        };
        *slot = v;
    }
    Ok(spec)
}

// ---- gradcheck ------------------------------------------------------------

pub fn gradcheck(suite: &SuiteConfig) -> AppResult<Vec<CheckItem>> {
    Ok(run_suite(suite)?)
}
