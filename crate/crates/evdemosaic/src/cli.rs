//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use evdemosaic_core::gradcheck::{SuiteConfig, DEFAULT_EPS, DEFAULT_THRESHOLD};
use evdemosaic_core::mosaic::{CfaPattern, DEFAULT_WHITE_LEVEL};

use crate::commands::{
    default_curve_specs, eval, gradcheck, losscurves, parse_loss_spec, simulate, train, EvalArgs, LossCurveArgs, SimulateArgs,
    SimulateSource, TrainArgs,
};
use crate::config::{load_config, RunConfig};
use crate::error::{AppError, AppResult};

#[derive(Debug, Parser)]
#[command(name = "evdemosaic", version, about = "Demosaicing for event-camera RAW frames with missing pixels")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the model and training seeds (and the synthetic scene seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mosaic RGB images into `.hevs` RAW frames and write a manifest.
    Simulate(SimulateCmd),
    /// Two-stage training from the configuration file.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalCmd),
    /// Sample loss values and gradients over the pixel difference.
    Losscurves(LossCurvesCmd),
    /// Finite-difference check of every op, every loss and the model.
    Gradcheck(GradcheckCmd),
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    /// Directory of PNG ground-truth images.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many procedural scenes instead of reading PNGs.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of the procedural scenes in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// CFA pattern id: `hybridevs`, `hybridevs-gr` or `quad-bayer`
    #[arg(long, default_value = CfaPattern::HYBRIDEVS_ID)]
    pub pattern: String,
    /// Sample value of full intensity
    #[arg(long, default_value_t = DEFAULT_WHITE_LEVEL)]
    pub white_level: u16,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of pairs to evaluate; defaults to the configuration's.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also score the classical bilinear reconstruction.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct LossCurvesCmd {
    /// `charbonnier[:eps=E]`, `pf_power[:a=A,b=B,g=G]` or `pf_exp[:lambda=L]`;
    /// repeatable. Defaults to all three families.
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    /// Samples on [0, 1].
    #[arg(long, default_value_t = 1001)]
    pub points: usize,
    /// Samples on [0, 0.1].
    #[arg(long, default_value_t = 1001)]
    pub zoom_points: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Central-difference step
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
}

fn run_config(cli: &Cli) -> AppResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> AppResult<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| AppError::Usage("no output directory: pass --out or set [output] dir".into()))
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> AppResult<i32> {
    let cfg = run_config(cli)?;
    match &cli.command {
        Command::Simulate(c) => {
            let source = match (&c.input, c.synthetic) {
                (Some(dir), _) => SimulateSource::Dir(dir.clone()),
                (None, Some(count)) => SimulateSource::Synthetic { count, size: c.size },
                (None, None) => return Err(AppError::Usage("pass --input or --synthetic".into())),
            };
            let s = simulate(&SimulateArgs {
                source,
                out: out_dir(cli, &cfg)?,
                pattern: c.pattern.clone(),
                white_level: c.white_level,
                seed: cli.seed.unwrap_or(0),
            })?;
            println!("wrote {} pairs, skipped {}", s.written.len(), s.skipped.len());
        }
        Command::Train(c) => {
            let out = out_dir(cli, &cfg)?;
            let s = train(&TrainArgs {
                config: cfg,
                out,
                resume: c.resume.clone(),
            })?;
            println!("{} steps; final checkpoint {}", s.history.steps.len(), s.final_checkpoint.display());
        }
        Command::Eval(c) => {
            let manifest = c
                .manifest
                .clone()
                .or_else(|| cfg.val_manifest.clone())
                .or_else(|| cfg.manifest.clone())
                .ok_or_else(|| AppError::Usage("pass --manifest or set [data] manifest".into()))?;
            let rows = eval(&EvalArgs {
                checkpoint: c.checkpoint.clone(),
                manifest,
                out: out_dir(cli, &cfg)?,
                baseline: c.baseline,
                model: cli.config.as_ref().map(|_| cfg.model.clone()),
            })?;
            for r in &rows {
                match r.baseline {
                    Some((bp, bs)) => println!("{}\t{}\t{}\t{}\t{}", r.id, r.psnr, r.ssim, bp, bs),
                    None => println!("{}\t{}\t{}", r.id, r.psnr, r.ssim),
                }
            }
        }
        Command::Losscurves(c) => {
            let specs = if c.specs.is_empty() {
                default_curve_specs()
            } else {
                c.specs.iter().map(|s| parse_loss_spec(s)).collect::<AppResult<_>>()?
            };
            losscurves(&LossCurveArgs {
                specs,
                points: c.points,
                zoom_points: c.zoom_points,
                out: out_dir(cli, &cfg)?,
            })?;
        }
        Command::Gradcheck(c) => {
            let mut suite = SuiteConfig::new(cfg.model.clone());
            suite.eps = c.eps;
            suite.seed = cli.seed.unwrap_or(0);
            let items = gradcheck(&suite)?;
            let mut failed = 0;
            for it in &items {
                let ok = it.passes(c.threshold);
                failed += usize::from(!ok);
                println!(
                    "{:<5} {:<20} max_rel_err {:.3e}  {}",
                    it.kind.name(),
                    it.name,
                    it.max_rel_err,
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            println!("{} of {} items above threshold {:e}", failed, items.len(), c.threshold);
            if failed > 0 {
                return Ok(crate::error::exit::NUMERIC);
            }
        }
    }
    Ok(crate::error::exit::SUCCESS)
}
