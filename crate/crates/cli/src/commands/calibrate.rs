//! `calibrate`: fold mined train/test coefficient vectors into the frozen
//! detection context.

use std::path::{Path, PathBuf};

use anyhow::Context;

use u2detect_core::conformance::{calibrate_with_threshold, Provenance};
use u2detect_core::model::CoefficientVector;
use u2detect_core::rnn::MiningResult;

use crate::manifest::RunManifest;
use crate::{runtime, usage, CmdResult, CommonRunArgs};

use super::stem;

fn load_omegas(paths: &[PathBuf]) -> anyhow::Result<(Vec<CoefficientVector>, Vec<String>)> {
    let mut omegas = Vec::with_capacity(paths.len());
    let mut labels = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let result = MiningResult::from_json(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        if !result.converged {
            log::warn!("{}: mining had not converged", path.display());
        }
        omegas.push(result.omega);
        labels.push(stem(path));
    }
    Ok((omegas, labels))
}

pub fn run(common: &CommonRunArgs, train: &[PathBuf], test: &[PathBuf], out: &Path) -> CmdResult {
    let resolved = RunManifest::load(&common.manifest).map_err(usage)?;
    let (train_omegas, train_labels) = load_omegas(train).map_err(usage)?;
    let (test_omegas, test_labels) = load_omegas(test).map_err(usage)?;

    let calibration = calibrate_with_threshold(
        &train_omegas,
        &test_omegas,
        &resolved.reference,
        resolved.manifest.calibration.alpha,
        resolved.manifest.calibration.threshold,
    )
    .map_err(usage)?
    .with_provenance(Provenance {
        train_labels,
        test_labels,
        seed: common.seed.unwrap_or(resolved.manifest.seed),
        template_hash: resolved.template.content_hash(),
    });

    std::fs::write(out, calibration.to_json() + "\n")
        .with_context(|| format!("writing {}", out.display()))
        .map_err(runtime)?;
    println!(
        "calibrated: rho_m = {:.5}, k = {}, d = {:.5}, interval = [{:.5}, {:.5}] -> {}",
        calibration.rho_m,
        calibration.k,
        calibration.d,
        calibration.interval.0,
        calibration.interval.1,
        out.display()
    );
    Ok(())
}
