//! Dataset manifests: one `raw-path<TAB>gt-path` pair per line, paths
//! relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use evdemosaic_core::train::TrainSample;

use crate::error::{AppError, AppResult};
use crate::io::{read_hevs, read_png};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub raw: PathBuf,
    pub gt: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> AppResult<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>()[..] {
            [raw, gt] => pairs.push(Pair {
                raw: base.join(raw),
                gt: base.join(gt),
            }),
            _ => {
                return Err(AppError::Data(format!(
                    "manifest line {}: expected two tab-separated paths",
                    i + 1
                )))
            }
        }
    }
    Ok(pairs)
}

pub fn read_manifest(path: &Path) -> AppResult<Vec<Pair>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("."))).map_err(|e| e.at(path))
}

pub fn write_manifest(path: &Path, rows: &[(String, String)]) -> AppResult<()> {
    let text: String = rows.iter().map(|(r, g)| format!("{r}\t{g}\n")).collect();
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Loads every pair; sample ids are the RAW file stems.
pub fn load_samples(path: &Path) -> AppResult<Vec<TrainSample>> {
    read_manifest(path)?
        .into_iter()
        .map(|p| {
            let raw = read_hevs(&p.raw)?;
            let gt = read_png(&p.gt)?;
            if (raw.width, raw.height) != (gt.width, gt.height) {
                return Err(AppError::Data(format!(
                    "{} is {}x{} but {} is {}x{}",
                    p.raw.display(),
                    raw.width,
                    raw.height,
                    p.gt.display(),
                    gt.width,
                    gt.height
                )));
            }
            let id = p.raw.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(TrainSample { id, raw, gt })
        })
        .collect()
}
