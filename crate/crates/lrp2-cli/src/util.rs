//! Shared helpers for the subcommands.

use std::path::Path;

use lrp2::engine::{load_weights, Mode, Model};
use lrp2::error::{Error, Result};
use lrp2::geometry::ConfigTag;
use lrp2::langvec::{load_language_vectors, LanguageVectorSet};

/// The effective seed: `LRP2_SEED` overrides the flag when set.
pub fn resolve_seed(flag: u64) -> u64 {
    match std::env::var("LRP2_SEED") {
        Ok(value) => value.parse().unwrap_or(flag),
        Err(_) => flag,
    }
}

/// Bound the worker count. Call once, before any parallel work.
pub fn configure_jobs(jobs: Option<usize>) {
    if let Some(jobs) = jobs {
        lrp2::configure_worker_threads(jobs);
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    load_weights(path)
}

pub fn parse_mode(mode: &str) -> Result<Mode> {
    match mode {
        "masked" => Ok(Mode::Masked),
        "causal" => Ok(Mode::Causal),
        other => Err(Error::Config(format!("unknown mode {other:?} (expected masked or causal)"))),
    }
}

/// Load `<dir>/<lang>.lrpw`, checking the stored language id.
pub fn load_vectors(dir: &Path, lang: &str) -> Result<LanguageVectorSet> {
    let path = dir.join(format!("{lang}.lrpw"));
    let set = load_language_vectors(&path)?;
    if set.lang != lang {
        return Err(Error::Integrity(format!(
            "{} stores vectors for {:?}, expected {lang:?}",
            path.display(),
            set.lang
        )));
    }
    Ok(set)
}

/// Filesystem-friendly label for a configuration.
pub fn config_label(tag: ConfigTag) -> String {
    match tag {
        ConfigTag::Baseline => "baseline".into(),
        ConfigTag::Pair { lirp, lsrp } => format!("lirp{lirp}-lsrp{lsrp}"),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Parse a grid flag like `"1:3,2:4"`.
pub fn parse_grid(grid: &str) -> Result<Vec<(usize, usize)>> {
    grid.split(',')
        .map(|pair| {
            let (i, j) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad grid entry {pair:?} (expected i:j)")))?;
            let i = i.trim().parse().map_err(|_| Error::Config(format!("bad grid entry {pair:?}")))?;
            let j = j.trim().parse().map_err(|_| Error::Config(format!("bad grid entry {pair:?}")))?;
            Ok((i, j))
        })
        .collect()
}
