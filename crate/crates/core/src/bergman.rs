//! Insulin-pump case study: a linearized three-state glucose-insulin plant
//! with fault injection.
//!
//! States are deviations from the overnight operating point: plasma insulin
//! `i`, interstitial insulin action `i_s`, and blood glucose `G`:
//!
//! ```text
//! di/dt   = -n * i + p4 * u1
//! di_s/dt = -p1 * i_s + p2 * (i - i_b)
//! dG/dt   = -G_b * i_s - p3 * G + u2 / VoI
//! ```
//!
//! `u1` is the insulin infusion and `u2` the meal glucose appearance; only
//! `G` is measurable. The reference coefficient set ships with the module
//! and is stored verbatim, units and all, as the conformance reference.
//!
//! Scenario generation integrates the plant with the *actually delivered*
//! insulin and reports glucose as absolute CGM (`baseline + G`). Under a
//! cartridge blockage, `(1 - f) * bolus` is delivered at t = 0 and the
//! withheld fraction comes out as a lump at the release time (insulin
//! stacking); an unlogged correction bolus can follow. The logged view
//! keeps the commanded input (full bolus at t = 0, no correction): that
//! input/output inconsistency is what coefficient mining exposes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    integrate_reference_with_drift, CoefficientVector, InputSchedule, ModelError, ModelTemplate,
    PatternEntry, Trace, Trajectory,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("input ({bolus} U, {meal} g) is outside the supported box [0, 40] x [0, 28]")]
    InputOutOfRange { bolus: f64, meal: f64 },
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Signal names used across traces, formulas and templates.
pub const GLUCOSE: &str = "G";
pub const INSULIN_INPUT: &str = "u1";
pub const MEAL_INPUT: &str = "u2";

/// Coefficients of the linearized plant, stored verbatim in the source
/// units (rates in 1/min). `i_b` is the basal insulin offset entering the
/// `i_s` equation; it defaults to 0 in deviation coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BergmanParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub n: f64,
    pub voi: f64,
    pub g_b: f64,
    #[serde(default)]
    pub i_b: f64,
}

impl BergmanParams {
    /// Bundled reference coefficient set (the simulator settings the
    /// conformance check is calibrated against).
    pub fn reference() -> Self {
        BergmanParams {
            p1: 0.098,
            p2: 0.1406,
            p3: 0.028,
            p4: 0.05,
            n: 199.6,
            voi: -80.0,
            g_b: 0.035,
            i_b: 0.0,
        }
    }

    pub fn param_names() -> [&'static str; 7] {
        ["p1", "p2", "p3", "p4", "n", "VoI", "G_b"]
    }

    /// The seven named parameters as an array, in the fixed order of
    /// [`BergmanParams::param_names`].
    pub fn param_array(&self) -> [f64; 7] {
        [self.p1, self.p2, self.p3, self.p4, self.n, self.voi, self.g_b]
    }

    /// Template slot values in canonical order:
    /// `[a(i,i), a(i_s,i), a(i_s,i_s), a(G,i_s), a(G,G), b(i), b(G)]`
    /// = `[-n, p2, -p1, -G_b, -p3, p4, 1/VoI]`.
    pub fn to_coefficients(&self, template: &ModelTemplate) -> Result<CoefficientVector, ModelError> {
        CoefficientVector::from_values_with_units(
            template,
            &[
                -self.n,
                self.p2,
                -self.p1,
                -self.g_b,
                -self.p3,
                self.p4,
                1.0 / self.voi,
            ],
            &["1/min", "1/min", "1/min", "mg/dl/min", "1/min", "", "1/dl"],
        )
    }

    /// Inverse of [`BergmanParams::to_coefficients`]; `i_b` is not a slot
    /// and comes back as 0.
    pub fn from_coefficients(omega: &CoefficientVector) -> Result<Self, ModelError> {
        let get = |name: &str| {
            omega.get(name).ok_or_else(|| {
                ModelError::CoefficientMismatch(format!("missing slot `{name}`"))
            })
        };
        let inv_voi = get("b(G)")?;
        if inv_voi == 0.0 {
            return Err(ModelError::CoefficientMismatch(
                "b(G) = 0 cannot be inverted into VoI".into(),
            ));
        }
        Ok(BergmanParams {
            p1: -get("a(i_s,i_s)")?,
            p2: get("a(i_s,i)")?,
            p3: -get("a(G,G)")?,
            p4: get("b(i)")?,
            n: -get("a(i,i)")?,
            voi: 1.0 / inv_voi,
            g_b: -get("a(G,i_s)")?,
            i_b: 0.0,
        })
    }

    /// Largest relative deviation over the seven named parameters.
    pub fn max_param_deviation(&self, reference: &BergmanParams) -> f64 {
        self.param_array()
            .iter()
            .zip(reference.param_array())
            .map(|(v, r)| ((v - r) / r).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for BergmanParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// The three-variable plant template: states `(i, i_s, G)`, only `G`
/// observable, five free `A` slots and two input gains.
pub fn bergman_template() -> ModelTemplate {
    use PatternEntry::{FreeAny, FreeNegative, FreePositive, Zero};
    ModelTemplate::new(
        vec!["i".into(), "i_s".into(), GLUCOSE.into()],
        vec![INSULIN_INPUT.into(), "u_is".into(), MEAL_INPUT.into()],
        vec![
            vec![FreeNegative, Zero, Zero],
            vec![FreePositive, FreeNegative, Zero],
            vec![Zero, FreeNegative, FreeNegative],
        ],
        vec![FreePositive, Zero, FreeAny],
        vec![false, false, true],
    )
    .expect("the bundled template is valid")
}

/// Kind of injected fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    None,
    CartridgeBlockage,
    CartridgeBlockageWithPhantom,
}

/// An insulin-delivery fault: a cartridge blockage withholds part of the
/// commanded bolus until a later release, optionally compounded by an
/// unlogged correction bolus (the "phantom meal" pattern).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    /// Withheld fraction of the bolus, in [0, 1].
    #[serde(default)]
    pub block_fraction: f64,
    /// Minutes until the withheld insulin is released.
    #[serde(default)]
    pub release_time_min: f64,
    /// Unlogged correction dose; defaults to 50% of the bolus.
    #[serde(default)]
    pub phantom_bolus_u: Option<f64>,
    /// Minutes at which the correction is taken; defaults to release + 10.
    #[serde(default)]
    pub phantom_time_min: Option<f64>,
}

impl FaultScenario {
    pub fn none() -> Self {
        FaultScenario {
            kind: FaultKind::None,
            block_fraction: 0.0,
            release_time_min: 0.0,
            phantom_bolus_u: None,
            phantom_time_min: None,
        }
    }

    pub fn blockage(block_fraction: f64, release_time_min: f64) -> Self {
        FaultScenario {
            kind: FaultKind::CartridgeBlockage,
            block_fraction,
            release_time_min,
            phantom_bolus_u: None,
            phantom_time_min: None,
        }
    }

    pub fn blockage_with_phantom(block_fraction: f64, release_time_min: f64) -> Self {
        FaultScenario {
            kind: FaultKind::CartridgeBlockageWithPhantom,
            block_fraction,
            release_time_min,
            phantom_bolus_u: None,
            phantom_time_min: None,
        }
    }

    fn validate(&self, horizon_min: f64) -> Result<(), ScenarioError> {
        if self.kind == FaultKind::None {
            return Ok(());
        }
        if !(0.0..=1.0).contains(&self.block_fraction) {
            return Err(ScenarioError::InvalidFault(format!(
                "block fraction {} outside [0, 1]",
                self.block_fraction
            )));
        }
        if !(self.release_time_min > 0.0 && self.release_time_min < horizon_min) {
            return Err(ScenarioError::InvalidFault(format!(
                "release time {} min outside (0, {horizon_min})",
                self.release_time_min
            )));
        }
        if self.kind == FaultKind::CartridgeBlockageWithPhantom {
            let t = self.phantom_time_min.unwrap_or(self.release_time_min + 10.0);
            if !(t > 0.0 && t < horizon_min) {
                return Err(ScenarioError::InvalidFault(format!(
                    "phantom time {t} min outside (0, {horizon_min})"
                )));
            }
            if let Some(dose) = self.phantom_bolus_u {
                if !(dose >= 0.0 && dose.is_finite()) {
                    return Err(ScenarioError::InvalidFault(format!(
                        "phantom dose {dose} U invalid"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generation knobs shared by every scenario in a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub params: BergmanParams,
    pub horizon_min: f64,
    /// Sampling period in minutes. Keep `tau * n` well below 1 so both the
    /// reference integrator and the Euler recurrence are stable at the
    /// reference coefficients.
    pub tau_min: f64,
    /// Gaussian measurement noise (standard deviation, mg/dl) on the
    /// logged glucose channel only.
    pub noise_sd: f64,
    /// Operating-point CGM added to the glucose deviation state.
    pub baseline_glucose: f64,
    pub seed: u64,
    /// Permit (bolus, meal) outside the supported input box.
    #[serde(default)]
    pub allow_out_of_range: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: BergmanParams::reference(),
            horizon_min: 420.0,
            tau_min: 0.005,
            noise_sd: 0.0,
            baseline_glucose: 120.0,
            seed: 0,
            allow_out_of_range: false,
        }
    }
}

/// Logged and ground-truth views of one simulated scenario.
///
/// Both views share the glucose output of the true plant (the logged one
/// optionally noisy) and the meal channel; they differ in the insulin
/// input: logged carries the commanded bolus, truth the delivered insulin.
/// The truth view additionally exposes the hidden states (as deviations).
#[derive(Debug, Clone)]
pub struct ScenarioPair {
    pub logged: Trace,
    pub truth: Trace,
}

/// Simulate one (bolus, meal) scenario under a fault.
pub fn generate_scenario(
    bolus_u: f64,
    meal_g: f64,
    fault: &FaultScenario,
    config: &ScenarioConfig,
) -> Result<ScenarioPair, ScenarioError> {
    if !config.allow_out_of_range
        && !((0.0..=40.0).contains(&bolus_u) && (0.0..=28.0).contains(&meal_g))
    {
        return Err(ScenarioError::InputOutOfRange {
            bolus: bolus_u,
            meal: meal_g,
        });
    }
    if !(config.horizon_min > 0.0 && config.tau_min > 0.0) {
        return Err(ScenarioError::InvalidConfig(
            "horizon and tau must be positive".into(),
        ));
    }
    fault.validate(config.horizon_min)?;

    let steps = (config.horizon_min / config.tau_min).round() as usize;
    if steps < 1 {
        return Err(ScenarioError::InvalidConfig(
            "horizon shorter than one sample".into(),
        ));
    }
    let template = bergman_template();
    let p = &config.params;
    let omega = p.to_coefficients(&template)?;

    // delivered insulin
    let mut u_true = InputSchedule::new();
    match fault.kind {
        FaultKind::None => {
            u_true.add_impulse(INSULIN_INPUT, 0.0, bolus_u)?;
        }
        FaultKind::CartridgeBlockage | FaultKind::CartridgeBlockageWithPhantom => {
            let withheld = fault.block_fraction * bolus_u;
            u_true.add_impulse(INSULIN_INPUT, 0.0, bolus_u - withheld)?;
            if withheld > 0.0 {
                u_true.add_impulse(INSULIN_INPUT, fault.release_time_min, withheld)?;
            }
            if fault.kind == FaultKind::CartridgeBlockageWithPhantom {
                let dose = fault.phantom_bolus_u.unwrap_or(0.5 * bolus_u);
                let at = fault
                    .phantom_time_min
                    .unwrap_or(fault.release_time_min + 10.0);
                u_true.add_impulse(INSULIN_INPUT, at, dose)?;
            }
        }
    }
    u_true.add_impulse(MEAL_INPUT, 0.0, meal_g)?;

    // commanded insulin as the pump log records it
    let mut u_logged = InputSchedule::new();
    u_logged.add_impulse(INSULIN_INPUT, 0.0, bolus_u)?;
    u_logged.add_impulse(MEAL_INPUT, 0.0, meal_g)?;

    let drift = [0.0, -p.p2 * p.i_b, 0.0];
    let truth_states = integrate_reference_with_drift(
        &template,
        &omega,
        &u_true,
        &[0.0, 0.0, 0.0],
        config.tau_min,
        steps,
        Some(&drift),
    )?;

    let tau = config.tau_min;
    let sample_channel = |u: &InputSchedule, name: &str| -> Vec<f64> {
        (0..=steps).map(|k| u.sample(name, k, tau)).collect()
    };
    let glucose_abs: Vec<f64> = truth_states
        .signal(GLUCOSE)
        .expect("template has G")
        .values()
        .iter()
        .map(|dg| config.baseline_glucose + dg)
        .collect();

    let mut logged_glucose = glucose_abs.clone();
    if config.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.noise_sd)
            .map_err(|e| ScenarioError::InvalidConfig(format!("noise: {e}")))?;
        for g in &mut logged_glucose {
            *g += normal.sample(&mut rng);
        }
    }

    let logged = Trace::from_columns(
        0.0,
        tau,
        vec![
            (GLUCOSE.to_string(), logged_glucose),
            (INSULIN_INPUT.to_string(), sample_channel(&u_logged, INSULIN_INPUT)),
            (MEAL_INPUT.to_string(), sample_channel(&u_logged, MEAL_INPUT)),
        ],
    )?;
    let truth = Trace::new(
        [
            (GLUCOSE.to_string(), Trajectory::new(0.0, tau, glucose_abs)?),
            (
                "i".to_string(),
                truth_states.signal("i").expect("template has i").clone(),
            ),
            (
                "i_s".to_string(),
                truth_states.signal("i_s").expect("template has i_s").clone(),
            ),
            (
                INSULIN_INPUT.to_string(),
                Trajectory::new(0.0, tau, sample_channel(&u_true, INSULIN_INPUT))?,
            ),
            (
                MEAL_INPUT.to_string(),
                Trajectory::new(0.0, tau, sample_channel(&u_true, MEAL_INPUT))?,
            ),
        ]
        .into_iter()
        .collect(),
    )?;
    Ok(ScenarioPair { logged, truth })
}

/// A `(bolus U, meal g)` operating input.
pub type OperatingInput = (f64, f64);

/// The fixed clean-operation input sets used for calibration:
/// six train and six held-out test `(bolus U, meal g)` pairs.
pub fn reference_input_sets() -> (Vec<OperatingInput>, Vec<OperatingInput>) {
    (
        vec![
            (15.0, 17.0),
            (20.0, 20.0),
            (10.0, 12.0),
            (12.0, 14.0),
            (25.0, 22.0),
            (5.0, 12.0),
        ],
        vec![
            (12.0, 17.0),
            (28.0, 20.0),
            (7.0, 6.0),
            (14.0, 13.0),
            (17.0, 14.0),
            (32.0, 27.0),
        ],
    )
}

/// The ten blockage configurations exercised by the fault-detection suite:
/// `(block percent, release minutes)`, each run plain and with a phantom
/// correction.
pub fn fault_grid() -> [(f64, f64); 5] {
    [(20.0, 150.0), (40.0, 120.0), (80.0, 90.0), (70.0, 70.0), (60.0, 50.0)]
}
