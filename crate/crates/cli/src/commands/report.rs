//! `report`: render a completed run directory (simulate + detect outputs)
//! into a markdown report and plot-ready CSVs.
//!
//! For each scenario the plot CSV carries the logged glucose, the
//! ground-truth glucose, and the reference-model response to the *logged*
//! inputs, so the original-model/operational-model overlay can be plotted
//! directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};

use u2detect_core::bergman::{bergman_template, BergmanParams, FaultKind, GLUCOSE};
use u2detect_core::conformance::Calibration;
use u2detect_core::model::Trace;
use u2detect_core::rnn::{DynamicsRnn, Inputs};

use crate::{runtime, usage, CmdResult};

use super::detect::LabeledVerdict;
use super::ensure_dir;
use super::simulate::IndexEntry;

const MAX_PLOT_ROWS: usize = 1500;

pub fn run(run_dir: &Path, out: &Path) -> CmdResult {
    let index_path = run_dir.join("scenarios.json");
    if !index_path.is_file() {
        return Err(usage(anyhow!(
            "{} has no scenarios.json; run `simulate` first",
            run_dir.display()
        )));
    }
    let index: Vec<IndexEntry> = serde_json::from_str(
        &std::fs::read_to_string(&index_path)
            .with_context(|| format!("reading {}", index_path.display()))
            .map_err(usage)?,
    )
    .context("parsing scenarios.json")
    .map_err(usage)?;
    if index.is_empty() {
        return Err(usage(anyhow!("scenarios.json lists no scenarios")));
    }

    let calibration = read_calibration(run_dir).map_err(usage)?;
    let verdicts = read_verdicts(run_dir).map_err(usage)?;

    // validate all trace files up front
    let mut traces = Vec::new();
    for entry in &index {
        let logged = Trace::from_csv_file(&run_dir.join(&entry.logged_csv))
            .with_context(|| format!("reading {}", entry.logged_csv))
            .map_err(usage)?;
        let truth = Trace::from_csv_file(&run_dir.join(&entry.truth_csv))
            .with_context(|| format!("reading {}", entry.truth_csv))
            .map_err(usage)?;
        traces.push((logged, truth));
    }

    ensure_dir(out).map_err(runtime)?;
    let template = bergman_template();
    let omega_ref = calibration
        .as_ref()
        .map(|c| c.omega_ref.clone())
        .unwrap_or_else(|| {
            BergmanParams::reference()
                .to_coefficients(&template)
                .expect("builtin reference binds")
        });

    let mut report = String::new();
    writeln!(report, "# Run report\n").unwrap();
    writeln!(report, "Source: `{}`\n", run_dir.display()).unwrap();
    if let Some(cal) = &calibration {
        writeln!(report, "## Calibration\n").unwrap();
        writeln!(
            report,
            "- mean train robustness rho_m = {:.5}\n- nonconformity bound d = {:.5} (rank {})\n- acceptance interval = [{:.5}, {:.5}] at alpha = {}\n- test residues: {}\n",
            cal.rho_m,
            cal.d,
            cal.k,
            cal.interval.0,
            cal.interval.1,
            cal.alpha,
            cal.test_residues
                .iter()
                .map(|r| format!("{r:.5}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
    }

    writeln!(report, "## Scenarios\n").unwrap();
    writeln!(
        report,
        "| scenario | bolus U | meal g | fault | robustness | residue | safety | flag |"
    )
    .unwrap();
    writeln!(report, "|---|---|---|---|---|---|---|---|").unwrap();
    for (entry, (logged, truth)) in index.iter().zip(&traces) {
        let fault = describe_fault(entry);
        let verdict = verdicts.get(&stem_of(&entry.logged_csv));
        let (rho, residue, flag, safety) = match verdict {
            Some(v) => (
                format!("{:.4}", v.verdict.robustness),
                format!("{:+.4}", v.verdict.residue),
                if v.verdict.flagged { "(D)" } else { "ok" }.to_string(),
                v.verdict
                    .safety_robustness
                    .map(|s| format!("{s:+.2}"))
                    .unwrap_or_else(|| "-".into()),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        writeln!(
            report,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            entry.spec.name, entry.spec.bolus, entry.spec.meal, fault, rho, residue, safety, flag
        )
        .unwrap();

        let plot = plot_csv(&template, &omega_ref, logged, truth);
        let plot_name = format!("plot_{}.csv", entry.spec.name);
        std::fs::write(out.join(&plot_name), plot)
            .with_context(|| format!("writing {plot_name}"))
            .map_err(runtime)?;
    }

    writeln!(
        report,
        "\n## Plot data\n\nOne `plot_<scenario>.csv` per scenario with columns `time_s, glucose_logged, glucose_truth, glucose_reference_model` (the last is the reference-coefficient response to the logged inputs; decimated to at most {MAX_PLOT_ROWS} rows)."
    )
    .unwrap();

    std::fs::write(out.join("report.md"), report)
        .context("writing report.md")
        .map_err(runtime)?;
    println!(
        "report for {} scenario(s) written to {}",
        index.len(),
        out.display()
    );
    Ok(())
}

fn stem_of(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_string())
}

fn describe_fault(entry: &IndexEntry) -> String {
    let f = &entry.spec.fault;
    match f.kind {
        FaultKind::None => "none".into(),
        FaultKind::CartridgeBlockage => format!(
            "blockage {:.0}% @ {} min",
            f.block_fraction * 100.0,
            f.release_time_min
        ),
        FaultKind::CartridgeBlockageWithPhantom => format!(
            "blockage {:.0}% @ {} min + phantom",
            f.block_fraction * 100.0,
            f.release_time_min
        ),
    }
}

fn read_calibration(run_dir: &Path) -> anyhow::Result<Option<Calibration>> {
    let path = run_dir.join("calibration.json");
    if !path.is_file() {
        return Ok(None);
    }
    let cal = Calibration::from_json(&std::fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(cal))
}

fn read_verdicts(run_dir: &Path) -> anyhow::Result<BTreeMap<String, LabeledVerdict>> {
    let path = run_dir.join("verdicts.jsonl");
    let mut map = BTreeMap::new();
    if !path.is_file() {
        return Ok(map);
    }
    for line in std::fs::read_to_string(&path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: LabeledVerdict =
            serde_json::from_str(line).with_context(|| format!("parsing verdict line {line}"))?;
        map.insert(v.trace.clone(), v);
    }
    Ok(map)
}

/// time, logged glucose, true glucose, reference-model glucose under the
/// logged inputs. The reference overlay is omitted when the forward pass
/// cannot run at the trace's sampling period.
fn plot_csv(
    template: &u2detect_core::model::ModelTemplate,
    omega_ref: &u2detect_core::model::CoefficientVector,
    logged: &Trace,
    truth: &Trace,
) -> String {
    let tau = logged.tau();
    let n = logged.len();
    let reference = DynamicsRnn::induce(template, tau)
        .and_then(|mut net| {
            net.set_coefficients(omega_ref)?;
            net.forward(Inputs::Trace(logged), &vec![0.0; template.n()], n - 1)
        })
        .ok()
        .and_then(|trace| {
            // deviation -> absolute using the logged starting level
            let base = logged.signal(GLUCOSE).map(|s| s.values()[0]).unwrap_or(0.0);
            trace
                .signal(GLUCOSE)
                .map(|s| s.values().iter().map(|v| v + base).collect::<Vec<f64>>())
        });

    let g_logged = logged.signal(GLUCOSE).map(|s| s.values());
    let g_truth = truth.signal(GLUCOSE).map(|s| s.values());
    let stride = n.div_ceil(MAX_PLOT_ROWS).max(1);
    let mut out = String::from("time_s,glucose_logged,glucose_truth,glucose_reference_model\n");
    for k in (0..n).step_by(stride) {
        let t = logged.t0() + k as f64 * tau;
        let lg = g_logged.map(|v| v[k].to_string()).unwrap_or_default();
        let tr = g_truth.map(|v| v[k].to_string()).unwrap_or_default();
        let rf = reference
            .as_ref()
            .map(|v| v[k].to_string())
            .unwrap_or_default();
        out.push_str(&format!("{t},{lg},{tr},{rf}\n"));
    }
    out
}
