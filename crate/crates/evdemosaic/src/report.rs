//! CSV exports.

use std::path::Path;

use evdemosaic_core::losses::{CurveSample, DifferenceHistogram, LossSpec};
use evdemosaic_core::train::{EpochRecord, StepRecord, TrainHistory};

use crate::error::{AppError, AppResult};

fn writer(path: &Path) -> AppResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

fn f(v: f64) -> String {
    v.to_string()
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, row: usize) -> AppResult<T> {
    s.trim()
        .parse()
        .map_err(|_| AppError::Data(format!("row {row}: cannot parse {what} from {s:?}")))
}

pub const HISTORY_HEADER: [&str; 6] = ["step", "stage", "epoch", "lr", "loss", "grad_norm"];

pub fn write_history(path: &Path, steps: &[StepRecord]) -> AppResult<()> {
    let mut w = writer(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in steps {
        w.write_record([r.step.to_string(), r.stage.to_string(), r.epoch.to_string(), f(r.lr), f(r.loss), f(r.grad_norm)])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_history(path: &Path) -> AppResult<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != HISTORY_HEADER.len() {
            return Err(AppError::Data(format!("{}: row {} has {} fields", path.display(), i + 1, rec.len())));
        }
        out.push(StepRecord {
            step: parse(&rec[0], "step", i + 1)?,
            stage: parse(&rec[1], "stage", i + 1)?,
            epoch: parse(&rec[2], "epoch", i + 1)?,
            lr: parse(&rec[3], "lr", i + 1)?,
            loss: parse(&rec[4], "loss", i + 1)?,
            grad_norm: parse(&rec[5], "grad_norm", i + 1)?,
        });
    }
    Ok(out)
}

pub fn write_validation(path: &Path, epochs: &[EpochRecord]) -> AppResult<()> {
    let mut w = writer(path)?;
    w.write_record(["stage", "epoch", "val_psnr", "val_ssim"])?;
    for e in epochs {
        w.write_record([e.stage.to_string(), e.epoch.to_string(), f(e.val_psnr), f(e.val_ssim)])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_train_history(dir: &Path, h: &TrainHistory) -> AppResult<()> {
    write_history(&dir.join("history.csv"), &h.steps)?;
    write_validation(&dir.join("validation.csv"), &h.epochs)
}

/// One evaluated image; `baseline` holds the classical reconstruction's
/// scores when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline: Option<(f64, f64)>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Per-image rows followed by a `mean` summary row. Infinite PSNR is
/// written as `inf`.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> AppResult<()> {
    let baseline = rows.iter().any(|r| r.baseline.is_some());
    let mut w = writer(path)?;
    let mut header = vec!["id", "psnr", "ssim"];
    if baseline {
        header.extend(["baseline_psnr", "baseline_ssim"]);
    }
    w.write_record(&header)?;
    let line = |id: String, p: f64, s: f64, b: Option<(f64, f64)>| {
        let mut rec = vec![id, f(p), f(s)];
        if baseline {
            let (bp, bs) = b.unwrap_or((f64::NAN, f64::NAN));
            rec.extend([f(bp), f(bs)]);
        }
        rec
    };
    for r in rows {
        w.write_record(line(r.id.clone(), r.psnr, r.ssim, r.baseline))?;
    }
    let summary = baseline.then(|| {
        (
            mean(rows.iter().filter_map(|r| r.baseline.map(|b| b.0))),
            mean(rows.iter().filter_map(|r| r.baseline.map(|b| b.1))),
        )
    });
    w.write_record(line(
        "mean".into(),
        mean(rows.iter().map(|r| r.psnr)),
        mean(rows.iter().map(|r| r.ssim)),
        summary,
    ))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_histogram(path: &Path, h: &DifferenceHistogram) -> AppResult<()> {
    let mut w = writer(path)?;
    w.write_record(["bin_lo", "bin_hi", "count", "fraction"])?;
    for (i, frac) in h.fractions().into_iter().enumerate() {
        w.write_record([f(h.edges[i]), f(h.edges[i + 1]), h.counts[i].to_string(), f(frac)])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Samples of one loss over one interval.
pub struct CurveGroup<'a> {
    pub spec: LossSpec,
    /// `full` for [0, 1], `zoom` for the magnified low range.
    pub range: &'a str,
    pub samples: Vec<CurveSample>,
}

pub fn write_loss_curves(path: &Path, groups: &[CurveGroup<'_>]) -> AppResult<()> {
    let mut w = writer(path)?;
    w.write_record(["curve", "range", "d", "value", "gradient"])?;
    for g in groups {
        for s in &g.samples {
            w.write_record([g.spec.label(), g.range.to_string(), f(s.d), f(s.value), f(s.gradient)])?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// One fine-tuning arm compared with the stage-1 checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub stage2_loss: String,
    pub stage1_psnr: f64,
    pub stage1_ssim: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub final_loss: f64,
}

impl AblationRow {
    pub fn delta_psnr(&self) -> f64 {
        self.psnr - self.stage1_psnr
    }

    pub fn delta_ssim(&self) -> f64 {
        self.ssim - self.stage1_ssim
    }
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> AppResult<()> {
    let mut w = writer(path)?;
    w.write_record([
        "stage2_loss",
        "psnr",
        "ssim",
        "stage1_psnr",
        "stage1_ssim",
        "delta_psnr",
        "delta_ssim",
        "direction",
        "final_loss",
    ])?;
    for r in rows {
        let dir = if r.delta_psnr() > 0.0 {
            "up"
        } else if r.delta_psnr() < 0.0 {
            "down"
        } else {
            "flat"
        };
        w.write_record([
            r.stage2_loss.clone(),
            f(r.psnr),
            f(r.ssim),
            f(r.stage1_psnr),
            f(r.stage1_ssim),
            f(r.delta_psnr()),
            f(r.delta_ssim()),
            dir.to_string(),
            f(r.final_loss),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}
