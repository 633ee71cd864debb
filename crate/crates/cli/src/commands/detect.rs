//! `detect`: mine each trace, compare its residue against the calibrated
//! interval, emit verdict JSON lines and a human summary table.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use u2detect_core::conformance::{detect, Calibration, Verdict};
use u2detect_core::model::Trace;

use crate::manifest::RunManifest;
use crate::{runtime, usage, CmdResult, CommonRunArgs};

use super::{stem, thread_pool};

/// One JSONL record: the verdict plus the trace it belongs to.
#[derive(Debug, Serialize, Deserialize)]
pub struct LabeledVerdict {
    pub trace: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

pub fn run(
    common: &CommonRunArgs,
    calibration_path: &Path,
    out: &Path,
    trace_paths: &[PathBuf],
) -> CmdResult {
    let resolved = RunManifest::load(&common.manifest).map_err(usage)?;
    let config = resolved.training_config(common.seed).map_err(usage)?;
    let calibration_text = std::fs::read_to_string(calibration_path)
        .with_context(|| format!("reading {}", calibration_path.display()))
        .map_err(usage)?;
    let calibration = Calibration::from_json(&calibration_text)
        .with_context(|| format!("parsing {}", calibration_path.display()))
        .map_err(usage)?;
    if let Some(p) = &calibration.provenance {
        let here = resolved.template.content_hash();
        if p.template_hash != here {
            return Err(usage(anyhow!(
                "calibration was built for template {} but the manifest resolves to {}",
                p.template_hash,
                here
            )));
        }
    }

    let mut traces = Vec::with_capacity(trace_paths.len());
    for path in trace_paths {
        let trace = Trace::from_csv_file(path)
            .with_context(|| format!("reading trace {}", path.display()))
            .map_err(usage)?;
        trace
            .check_covers(&resolved.template)
            .with_context(|| format!("{} does not cover the template", path.display()))
            .map_err(usage)?;
        traces.push(trace);
    }

    let pool = thread_pool(common).map_err(runtime)?;
    let verdicts: Vec<Result<Verdict, String>> = pool.install(|| {
        traces
            .par_iter()
            .zip(trace_paths.par_iter())
            .map(|(trace, path)| {
                detect(
                    trace,
                    &calibration,
                    &resolved.template,
                    &config,
                    resolved.safety.as_ref(),
                )
                .map_err(|e| format!("detect {}: {e}", path.display()))
            })
            .collect()
    });

    let mut lines = String::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (path, result) in trace_paths.iter().zip(verdicts) {
        match result {
            Ok(verdict) => {
                let labeled = LabeledVerdict {
                    trace: stem(path),
                    verdict,
                };
                lines.push_str(&serde_json::to_string(&labeled).expect("verdict serializes"));
                lines.push('\n');
                rows.push(labeled);
            }
            Err(message) => failures.push(message),
        }
    }
    std::fs::write(out, &lines)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(runtime)?;

    println!(
        "interval [{:.5}, {:.5}]  rho_m {:.5}",
        calibration.interval.0, calibration.interval.1, calibration.rho_m
    );
    println!(
        "{:<28} {:>10} {:>10} {:>9} {:>8}  notes",
        "trace", "robustness", "residue", "safety", "flag"
    );
    for row in &rows {
        let v = &row.verdict;
        let safety = v
            .safety_robustness
            .map(|s| format!("{s:+.2}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<28} {:>10.4} {:>10.4} {:>9} {:>8}  {}",
            row.trace,
            v.robustness,
            v.residue,
            safety,
            if v.flagged { "(D)" } else { "ok" },
            if v.low_confidence { "low-confidence" } else { "" }
        );
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        return Err(runtime(anyhow!("{} trace(s) failed", failures.len())));
    }
    Ok(())
}
