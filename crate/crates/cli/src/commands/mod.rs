pub mod calibrate;
pub mod detect;
pub mod induce;
pub mod mine;
pub mod report;
pub mod simulate;

use anyhow::{Context, Result};
use std::path::Path;

use crate::CommonRunArgs;

/// Build a rayon pool honoring `--jobs`; the default pool size is rayon's.
pub fn thread_pool(common: &CommonRunArgs) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = common.jobs {
        builder = builder.num_threads(jobs.max(1));
    }
    builder.build().context("building worker pool")
}

/// File stem used to label per-trace outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
