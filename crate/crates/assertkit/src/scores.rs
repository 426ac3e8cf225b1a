//! Score files, epoch logs and fusion reports.

use std::fs;
use std::path::Path;

use assertkit_core::metrics::ScoreSet;
use assertkit_core::training::EpochReport;

use crate::error::{format_err, io_err, Result};

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ScoreSet::parse(&text).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_scores(path: &Path, scores: &ScoreSet) -> Result<()> {
    fs::write(path, scores.to_text()).map_err(io_err(path))
}

pub fn write_epoch_log(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let text: String = reports.iter().map(|r| r.to_line() + "\n").collect();
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochReport>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| EpochReport::parse_line(l).map_err(|e| format_err(path, e.to_string())))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}
