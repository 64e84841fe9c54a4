use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use sssnav_core::filter::FilterMode;

/// `--mode` argument mirroring the filter's modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Detections and aux measurements with approximate association weights.
    Sss,
    /// Dead reckoning: detections and aux measurements stripped.
    Dr,
    /// Exact association enumeration; only small scenes.
    ExactAssoc,
}

impl From<ModeArg> for FilterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sss => FilterMode::Sss,
            ModeArg::Dr => FilterMode::Dr,
            ModeArg::ExactAssoc => FilterMode::ExactAssoc,
        }
    }
}

/// Run index from trailing digits of the file stem (`run_017` -> 17); the
/// positional index otherwise. Seeds derive from this so that a run keeps
/// its seed no matter how the file list is ordered.
pub fn run_index(path: &Path, fallback: usize) -> usize {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let tail: Vec<char> = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if tail.is_empty() {
        return fallback;
    }
    let digits: String = tail.into_iter().rev().collect();
    digits.parse().unwrap_or(fallback)
}

/// Estimate CSV path for a run file: `<out>/<run stem>.est.csv`.
pub fn estimate_path(out: &Path, run_path: &Path) -> PathBuf {
    let stem = run_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    out.join(format!("{stem}.est.csv"))
}

/// Path stored in a manifest: relative to the manifest's directory when the
/// target lies under it, absolute otherwise (joining keeps both working).
pub fn manifest_path_for(base: &Path, target: &Path) -> PathBuf {
    target
        .strip_prefix(base)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| target.to_path_buf())
}

#[cfg(feature = "parallel")]
pub fn try_for_each_indexed<T, F>(items: &[T], f: F) -> Result<()>
where
    T: Sync,
    F: Fn(usize, &T) -> Result<()> + Send + Sync,
{
    use rayon::prelude::*;
    items
        .par_iter()
        .enumerate()
        .try_for_each(|(i, item)| f(i, item))
}

#[cfg(not(feature = "parallel"))]
pub fn try_for_each_indexed<T, F>(items: &[T], f: F) -> Result<()>
where
    T: Sync,
    F: Fn(usize, &T) -> Result<()> + Send + Sync,
{
    for (i, item) in items.iter().enumerate() {
        f(i, item)?;
    }
    Ok(())
}
