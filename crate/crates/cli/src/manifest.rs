//! Run manifest: the declarative description of a batch experiment.
//!
//! ```json
//! {
//!   "template": "bergman",
//!   "reference": "bergman",
//!   "seed": 42,
//!   "scenario": { "horizon_min": 420.0, "tau_min": 0.005, "noise_sd": 0.0 },
//!   "scenarios": [
//!     { "name": "train_0", "bolus": 15.0, "meal": 17.0,
//!       "fault": { "kind": "none" }, "seed": 1 },
//!     { "name": "block_40_120", "bolus": 7.5, "meal": 20.0,
//!       "fault": { "kind": "cartridge_blockage",
//!                  "block_fraction": 0.4, "release_time_min": 120.0 } }
//!   ],
//!   "training": { "max_epochs": 4000, "patience": 300, "init": "reference" },
//!   "calibration": { "alpha": 0.05, "threshold": 0.01 }
//! }
//! ```
//!
//! `template`/`reference` accept the builtin `"bergman"` or
//! `{ "path": "..." }` pointing at a template JSON / coefficient-vector
//! JSON. Every referenced path must resolve at parse time. The global
//! `seed` feeds mining and combines with each scenario's own `seed` for
//! measurement noise.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use u2detect_core::bergman::{BergmanParams, FaultScenario, ScenarioConfig};
use u2detect_core::model::{CoefficientVector, ModelTemplate};
use u2detect_core::rnn::TrainingConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateSource {
    Builtin(String),
    Path { path: PathBuf },
}

impl Default for TemplateSource {
    fn default() -> Self {
        TemplateSource::Builtin("bergman".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub bolus: f64,
    pub meal: f64,
    #[serde(default = "default_fault")]
    pub fault: FaultScenario,
    #[serde(default)]
    pub seed: u64,
}

fn default_fault() -> FaultScenario {
    FaultScenario::none()
}

/// Training section: core config plus the initialization policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSpec {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_true")]
    pub normalize_loss_per_signal: bool,
    /// "reference" starts at the manifest's reference coefficients,
    /// "heuristic" uses the least-squares/decade fallback.
    #[serde(default = "default_init")]
    pub init: String,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    4000
}
fn default_tol() -> f64 {
    1e-6
}
fn default_patience() -> usize {
    300
}
fn default_psi() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}
fn default_init() -> String {
    "reference".into()
}

impl Default for TrainingSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_threshold() -> f64 {
    0.01
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            alpha: default_alpha(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub template: TemplateSource,
    #[serde(default)]
    pub reference: TemplateSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: ScenarioDefaults,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    /// Safety property in the formula text syntax, evaluated on each raw
    /// trace by `detect`. Defaults to the glucose floor formula when the
    /// builtin plant is selected.
    #[serde(default)]
    pub safety: Option<String>,
    /// Default output directory when `--out` is not given.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Scenario-generation knobs shared by every scenario in the manifest
/// (ScenarioConfig minus per-run params/seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDefaults {
    #[serde(default = "default_horizon")]
    pub horizon_min: f64,
    #[serde(default = "default_tau")]
    pub tau_min: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "default_baseline")]
    pub baseline_glucose: f64,
    #[serde(default)]
    pub allow_out_of_range: bool,
}

fn default_horizon() -> f64 {
    420.0
}
fn default_tau() -> f64 {
    0.005
}
fn default_baseline() -> f64 {
    120.0
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Manifest with its sources resolved against the manifest's directory.
pub struct ResolvedManifest {
    pub manifest: RunManifest,
    pub template: ModelTemplate,
    pub reference: CoefficientVector,
    pub reference_params: Option<BergmanParams>,
    pub safety: Option<u2detect_core::stl::StlFormula>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<ResolvedManifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve(base)
    }

    pub fn resolve(self, base: &Path) -> Result<ResolvedManifest> {
        let (template, builtin_template) = match &self.template {
            TemplateSource::Builtin(name) if name == "bergman" => {
                (u2detect_core::bergman::bergman_template(), true)
            }
            TemplateSource::Builtin(other) => bail!("unknown builtin template `{other}`"),
            TemplateSource::Path { path } => {
                let full = base.join(path);
                (
                    ModelTemplate::from_json_file(&full)
                        .with_context(|| format!("loading template {}", full.display()))?,
                    false,
                )
            }
        };
        let (reference, reference_params) = match &self.reference {
            TemplateSource::Builtin(name) if name == "bergman" => {
                let p = BergmanParams::reference();
                (p.to_coefficients(&template).context("reference binds template")?, Some(p))
            }
            TemplateSource::Builtin(other) => bail!("unknown builtin reference `{other}`"),
            TemplateSource::Path { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full)
                    .with_context(|| format!("loading reference {}", full.display()))?;
                let cv: CoefficientVector = serde_json::from_str(&text)
                    .with_context(|| format!("parsing reference {}", full.display()))?;
                cv.check_binds(&template).context("reference binds template")?;
                let params = builtin_template
                    .then(|| BergmanParams::from_coefficients(&cv).ok())
                    .flatten();
                (cv, params)
            }
        };
        if !(self.calibration.alpha >= 0.0 && self.calibration.alpha < 1.0) {
            bail!("calibration.alpha must lie in [0, 1)");
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !seen.insert(s.name.as_str()) {
                bail!("duplicate scenario name `{}`", s.name);
            }
            if s.name.contains(['/', '\\']) || s.name.is_empty() {
                bail!("scenario name `{}` is not a valid file stem", s.name);
            }
        }
        let safety = match &self.safety {
            Some(text) => Some(
                u2detect_core::stl::parse_formula(text)
                    .with_context(|| format!("parsing safety formula `{text}`"))?,
            ),
            None if builtin_template => Some(u2detect_core::stl::safety_formula()),
            None => None,
        };
        Ok(ResolvedManifest {
            manifest: self,
            template,
            reference,
            reference_params,
            safety,
        })
    }
}

impl ResolvedManifest {
    /// Scenario-generation config for one scenario, with the noise RNG
    /// seeded from the global and per-scenario seeds.
    pub fn scenario_config(&self, spec: &ScenarioSpec) -> ScenarioConfig {
        let d = &self.manifest.scenario;
        ScenarioConfig {
            params: self.reference_params.unwrap_or_default(),
            horizon_min: d.horizon_min,
            tau_min: d.tau_min,
            noise_sd: d.noise_sd,
            baseline_glucose: d.baseline_glucose,
            seed: self.manifest.seed.wrapping_mul(0x9e37_79b9).wrapping_add(spec.seed),
            allow_out_of_range: d.allow_out_of_range,
        }
    }

    /// Core training config; `seed_override` comes from `--seed`.
    pub fn training_config(&self, seed_override: Option<u64>) -> Result<TrainingConfig> {
        let t = &self.manifest.training;
        let initial_omega = match t.init.as_str() {
            "reference" => Some(self.reference.clone()),
            "heuristic" => None,
            other => bail!("training.init must be \"reference\" or \"heuristic\", got `{other}`"),
        };
        let config = TrainingConfig {
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            convergence_tol: t.convergence_tol,
            patience: t.patience,
            seed: seed_override.unwrap_or(self.manifest.seed),
            psi: t.psi,
            normalize_loss_per_signal: t.normalize_loss_per_signal,
            initial_omega,
        };
        config.validate()?;
        Ok(config)
    }
}
