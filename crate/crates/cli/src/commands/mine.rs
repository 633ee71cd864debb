//! `mine`: run coefficient mining on each trace CSV and write one result
//! JSON per trace. Deterministic for a fixed manifest and seed.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use u2detect_core::model::Trace;
use u2detect_core::rnn::{mine_coefficients, MiningResult};

use crate::manifest::RunManifest;
use crate::{runtime, usage, CmdResult, CommonRunArgs};

use super::{ensure_dir, stem, thread_pool};

pub fn run(common: &CommonRunArgs, out: &Path, trace_paths: &[PathBuf]) -> CmdResult {
    let resolved = RunManifest::load(&common.manifest).map_err(usage)?;
    let config = resolved.training_config(common.seed).map_err(usage)?;

    // validate every input before producing any output
    let mut traces = Vec::with_capacity(trace_paths.len());
    for path in trace_paths {
        let trace = Trace::from_csv_file(path)
            .with_context(|| format!("reading trace {}", path.display()))
            .map_err(usage)?;
        trace
            .check_covers(&resolved.template)
            .with_context(|| format!("{} does not cover the template", path.display()))
            .map_err(usage)?;
        traces.push(trace.observables_to_deltas(&resolved.template));
    }

    let pool = thread_pool(common).map_err(runtime)?;
    let results: Vec<Result<MiningResult, String>> = pool.install(|| {
        traces
            .par_iter()
            .zip(trace_paths.par_iter())
            .map(|(trace, path)| {
                mine_coefficients(&resolved.template, trace, &config)
                    .map_err(|e| format!("mining {}: {e}", path.display()))
            })
            .collect()
    });

    ensure_dir(out).map_err(runtime)?;
    let mut failures = Vec::new();
    for (path, result) in trace_paths.iter().zip(results) {
        match result {
            Ok(mining) => {
                let file = out.join(format!("{}.mining.json", stem(path)));
                std::fs::write(&file, mining.to_json() + "\n")
                    .with_context(|| format!("writing {}", file.display()))
                    .map_err(runtime)?;
                log::info!(
                    "{}: loss {:.3e}, {} epochs, converged = {}",
                    file.display(),
                    mining.final_loss,
                    mining.epochs_used,
                    mining.converged
                );
            }
            Err(message) => failures.push(message),
        }
    }
    println!(
        "mined {}/{} traces into {}",
        trace_paths.len() - failures.len(),
        trace_paths.len(),
        out.display()
    );
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        return Err(runtime(anyhow!("{} trace(s) failed to mine", failures.len())));
    }
    Ok(())
}
