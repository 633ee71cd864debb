//! `simulate`: run every manifest scenario through the plant and write
//! paired trace CSVs plus a `scenarios.json` index.

use std::path::Path;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use u2detect_core::bergman::{generate_scenario, ScenarioPair};

use crate::manifest::{RunManifest, ScenarioSpec};
use crate::{runtime, usage, CmdResult, CommonRunArgs};

use super::{ensure_dir, thread_pool};

/// Index entry written alongside the trace files; `report` joins on it.
#[derive(Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    #[serde(flatten)]
    pub spec: ScenarioSpec,
    pub logged_csv: String,
    pub truth_csv: String,
}

pub fn run(common: &CommonRunArgs, out: &Path) -> CmdResult {
    let mut resolved = RunManifest::load(&common.manifest).map_err(usage)?;
    if let Some(seed) = common.seed {
        resolved.manifest.seed = seed;
    }
    if resolved.manifest.scenarios.is_empty() {
        log::warn!("manifest has no scenarios; nothing to simulate");
        eprintln!("warning: manifest has no scenarios; nothing to simulate");
        return Ok(());
    }
    // builtin-plant scenarios need the builtin reference parameters
    if resolved.reference_params.is_none() {
        return Err(usage(anyhow!(
            "simulate requires the builtin plant (template/reference \"bergman\")"
        )));
    }

    let pool = thread_pool(common).map_err(runtime)?;
    let results: Vec<(usize, Result<ScenarioPair, String>)> = pool.install(|| {
        resolved
            .manifest
            .scenarios
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let config = resolved.scenario_config(spec);
                let r = generate_scenario(spec.bolus, spec.meal, &spec.fault, &config)
                    .map_err(|e| format!("scenario `{}`: {e}", spec.name));
                (i, r)
            })
            .collect()
    });

    ensure_dir(out).map_err(runtime)?;
    let mut index = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in results {
        let spec = &resolved.manifest.scenarios[i];
        match result {
            Ok(pair) => {
                let logged = format!("{}.logged.csv", spec.name);
                let truth = format!("{}.truth.csv", spec.name);
                pair.logged
                    .to_csv_file(&out.join(&logged))
                    .with_context(|| format!("writing {logged}"))
                    .map_err(runtime)?;
                pair.truth
                    .to_csv_file(&out.join(&truth))
                    .with_context(|| format!("writing {truth}"))
                    .map_err(runtime)?;
                index.push(IndexEntry {
                    spec: spec.clone(),
                    logged_csv: logged,
                    truth_csv: truth,
                });
            }
            Err(message) => failures.push(message),
        }
    }
    let index_json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(out.join("scenarios.json"), index_json + "\n")
        .context("writing scenarios.json")
        .map_err(runtime)?;
    println!(
        "simulated {}/{} scenarios into {}",
        index.len(),
        resolved.manifest.scenarios.len(),
        out.display()
    );
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        return Err(runtime(anyhow!("{} scenario(s) failed", failures.len())));
    }
    Ok(())
}
