//! Conformal calibration and out-of-conformance detection over mined
//! coefficients.
//!
//! Calibration splits the clean operating inputs into a train and a test
//! set. Coefficients mined from the train traces give a mean conformance
//! robustness `rho_m`; each test trace contributes a residue
//! `rho_test - rho_m`. The nonconformity bound `d` is the `k`-th smallest
//! raw (signed) test residue, floored at zero, with
//!
//! ```text
//! k = ceil((m / 2 + 1) * (1 - alpha)),   m = number of test residues
//! ```
//!
//! and the acceptance interval is `[min residue - d, max residue + d]`.
//! A new trace is flagged as non-conformal when its residue falls outside
//! this interval. The residue mean/std and the `[mean - s, mean + s]`
//! variant are computed and reported alongside, but the rank-based
//! interval is the operative detector.
//!
//! [`validate_surrogate`] estimates, by Monte Carlo over sampled inputs,
//! the probability that the robustness computed on mined coefficients
//! stays within `delta` of the robustness on the generator's true
//! coefficients: the empirical `(delta, epsilon)` guarantee of the mining
//! surrogate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CoefficientVector, ModelError, ModelTemplate, Trace};
use crate::rnn::{mine_coefficients, RnnError, TrainingConfig};
use crate::stl::{
    conformance_robustness_with_threshold, robustness, Signal, StlError, StlFormula,
    CONFORMANCE_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum ConformanceError {
    #[error("insufficient calibration data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("rank k = {k} exceeds the {m} available test residues")]
    RankOutOfRange { k: usize, m: usize },
    #[error("degenerate acceptance interval: lo {lo} > hi {hi}")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where a calibration came from, for reproducibility audits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Provenance {
    pub train_labels: Vec<String>,
    pub test_labels: Vec<String>,
    pub seed: u64,
    pub template_hash: String,
}

/// Frozen detection context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub omega_ref: CoefficientVector,
    /// Mean conformance robustness over the train set.
    pub rho_m: f64,
    /// Raw (signed) test residues, in input order.
    pub test_residues: Vec<f64>,
    /// Rank selected by the quantile rule (1-based).
    pub k: usize,
    /// Nonconformity bound: the k-th smallest test residue, floored at 0.
    pub d: f64,
    /// Acceptance interval for residues: [min - d, max + d].
    pub interval: (f64, f64),
    pub alpha: f64,
    /// Deviation-score threshold used when computing rho.
    pub threshold: f64,
    /// Residue mean and sample standard deviation, with the
    /// `[mean - s, mean + s]` variant interval; reported, not operative.
    pub mean_residue: f64,
    pub residue_std: f64,
    pub variance_interval: (f64, f64),
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

/// 1-based rank of the nonconformity bound for `m` test residues.
pub fn rank_for(m: usize, alpha: f64) -> Result<usize, ConformanceError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(ConformanceError::InvalidAlpha(alpha));
    }
    let k = ((m as f64 / 2.0 + 1.0) * (1.0 - alpha)).ceil() as usize;
    let k = k.max(1);
    if k > m {
        return Err(ConformanceError::RankOutOfRange { k, m });
    }
    Ok(k)
}

impl Calibration {
    /// Build the detection context directly from test residues and a
    /// train-mean robustness (the mined-coefficient path goes through
    /// [`calibrate`]).
    pub fn from_residues(
        omega_ref: CoefficientVector,
        rho_m: f64,
        test_residues: Vec<f64>,
        alpha: f64,
        threshold: f64,
    ) -> Result<Self, ConformanceError> {
        if test_residues.len() < 2 {
            return Err(ConformanceError::InsufficientData {
                needed: 2,
                got: test_residues.len(),
            });
        }
        let m = test_residues.len();
        let k = rank_for(m, alpha)?;
        let mut sorted = test_residues.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("residues are finite"));
        // d is a width; when the k-th smallest raw residue comes out
        // negative (clean residues hugging zero from below), a signed d
        // would shrink the interval inside the very data that calibrated
        // it and flag calibration points. Floor it at zero.
        let d = sorted[k - 1].max(0.0);
        let lo = sorted[0] - d;
        let hi = sorted[m - 1] + d;
        if lo > hi {
            return Err(ConformanceError::DegenerateInterval { lo, hi });
        }
        let mean = test_residues.iter().sum::<f64>() / m as f64;
        let var = test_residues
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / (m as f64 - 1.0);
        let std = var.sqrt();
        Ok(Calibration {
            omega_ref,
            rho_m,
            test_residues,
            k,
            d,
            interval: (lo, hi),
            alpha,
            threshold,
            mean_residue: mean,
            residue_std: std,
            variance_interval: (mean - std, mean + std),
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn contains(&self, residue: f64) -> bool {
        self.interval.0 <= residue && residue <= self.interval.1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Calibrate from mined train/test coefficient vectors against a reference.
pub fn calibrate(
    train_omegas: &[CoefficientVector],
    test_omegas: &[CoefficientVector],
    omega_ref: &CoefficientVector,
    alpha: f64,
) -> Result<Calibration, ConformanceError> {
    calibrate_with_threshold(train_omegas, test_omegas, omega_ref, alpha, CONFORMANCE_THRESHOLD)
}

/// [`calibrate`] with an explicit deviation-score threshold.
pub fn calibrate_with_threshold(
    train_omegas: &[CoefficientVector],
    test_omegas: &[CoefficientVector],
    omega_ref: &CoefficientVector,
    alpha: f64,
    threshold: f64,
) -> Result<Calibration, ConformanceError> {
    if train_omegas.len() < 2 {
        return Err(ConformanceError::InsufficientData {
            needed: 2,
            got: train_omegas.len(),
        });
    }
    if test_omegas.len() < 2 {
        return Err(ConformanceError::InsufficientData {
            needed: 2,
            got: test_omegas.len(),
        });
    }
    let mut rho_m = 0.0;
    for omega in train_omegas {
        rho_m += conformance_robustness_with_threshold(omega, omega_ref, threshold)?;
    }
    rho_m /= train_omegas.len() as f64;
    let mut residues = Vec::with_capacity(test_omegas.len());
    for omega in test_omegas {
        residues.push(conformance_robustness_with_threshold(omega, omega_ref, threshold)? - rho_m);
    }
    Calibration::from_residues(omega_ref.clone(), rho_m, residues, alpha, threshold)
}

/// Detection outcome for one trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    /// Conformance (deviation) robustness of the mined coefficients.
    pub robustness: f64,
    /// `robustness - rho_m`.
    pub residue: f64,
    pub inside_interval: bool,
    /// `!inside_interval`: the trace is non-conformal.
    pub flagged: bool,
    /// Robustness of the safety property on the raw trace, when one was
    /// supplied. Conformance can fail while this stays positive; that gap
    /// is the point of coefficient-level detection.
    pub safety_robustness: Option<f64>,
    pub omega: CoefficientVector,
    /// Mining stopped without meeting its convergence rule; the verdict
    /// stands but deserves scrutiny.
    pub low_confidence: bool,
    pub mining_epochs: usize,
    pub mining_loss: f64,
}

impl Verdict {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Mine the trace's coefficients and check their residue against the
/// calibrated interval. Observable signals are shifted to deviations from
/// their initial sample before mining; the safety formula (when given) is
/// evaluated on the raw trace.
pub fn detect(
    trace: &Trace,
    calibration: &Calibration,
    template: &ModelTemplate,
    config: &TrainingConfig,
    safety: Option<&StlFormula>,
) -> Result<Verdict, ConformanceError> {
    trace.check_covers(template)?;
    let safety_robustness = safety
        .map(|phi| robustness(phi, Signal::Trace(trace), 0))
        .transpose()?;
    let deltas = trace.observables_to_deltas(template);
    let mining = mine_coefficients(template, &deltas, config)?;
    let rho = conformance_robustness_with_threshold(
        &mining.omega,
        &calibration.omega_ref,
        calibration.threshold,
    )?;
    let residue = rho - calibration.rho_m;
    let inside = calibration.contains(residue);
    Ok(Verdict {
        robustness: rho,
        residue,
        inside_interval: inside,
        flagged: !inside,
        safety_robustness,
        omega: mining.omega,
        low_confidence: !mining.converged,
        mining_epochs: mining.epochs_used,
        mining_loss: mining.final_loss,
    })
}

/// One Monte Carlo draw for surrogate validation: a clean trace and the
/// generator coefficients that produced it.
#[derive(Debug, Clone)]
pub struct SurrogateSample {
    pub label: String,
    pub trace: Trace,
    pub true_omega: CoefficientVector,
}

/// Empirical distance-preservation estimate of the mining surrogate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurrogateReport {
    pub delta: f64,
    /// Empirical `P(|rho_true - rho_mined| <= delta)` = `1 - epsilon`.
    pub probability: f64,
    pub epsilon: f64,
    /// 95% normal-approximation binomial half-width on `probability`.
    pub half_width: f64,
    pub samples: usize,
    pub exceedances: usize,
    /// Mining failures, counted as exceedances.
    pub failures: usize,
}

/// Estimate `P(|rho(phi, omega_true) - rho(phi, omega_mined)| <= delta)`
/// over the given samples. `phi` is evaluated on single-element coefficient
/// sequences. Mining failures count as exceedances. Deterministic given the
/// config seed and the sample list.
pub fn validate_surrogate(
    samples: &[SurrogateSample],
    template: &ModelTemplate,
    config: &TrainingConfig,
    phi: &StlFormula,
    delta: f64,
) -> Result<SurrogateReport, ConformanceError> {
    const MIN_SAMPLES: usize = 30;
    if samples.len() < MIN_SAMPLES {
        return Err(ConformanceError::InsufficientData {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let mut exceedances = 0usize;
    let mut failures = 0usize;
    for sample in samples {
        let seq_true = [sample.true_omega.clone()];
        let rho_true = robustness(phi, Signal::Omega(&seq_true), 0)?;
        let deltas = sample.trace.observables_to_deltas(template);
        match mine_coefficients(template, &deltas, config) {
            Ok(result) => {
                let seq_mined = [result.omega];
                let rho_mined = robustness(phi, Signal::Omega(&seq_mined), 0)?;
                if !((rho_true - rho_mined).abs() <= delta) {
                    exceedances += 1;
                }
            }
            Err(e) => {
                log::warn!("surrogate sample `{}` failed to mine: {e}", sample.label);
                failures += 1;
                exceedances += 1;
            }
        }
    }
    let n = samples.len() as f64;
    let probability = 1.0 - exceedances as f64 / n;
    let half_width = 1.96 * (probability * (1.0 - probability) / n).sqrt();
    Ok(SurrogateReport {
        delta,
        probability,
        epsilon: 1.0 - probability,
        half_width,
        samples: samples.len(),
        exceedances,
        failures,
    })
}
