//! Signal temporal logic with quantitative (robustness) semantics over
//! sampled traces and over mined-coefficient sequences.
//!
//! The grammar is
//!
//! ```text
//! phi, psi := true | f >= c | f <= c | !phi | phi && psi | phi || psi
//!           | F_I phi | G_I phi | phi U_I psi
//! ```
//!
//! with closed intervals `I = [a, b]` in the signal's time units (samples
//! for coefficient sequences) or absent for "to the end of the signal".
//! Semantics are discrete: formulas are evaluated at sample points, and an
//! interval reaching past the final sample is a hard error rather than an
//! implicit truncation.
//!
//! Robustness follows the usual quantitative rules: a predicate evaluates
//! to `f(signal(t)) - c` (or `c - f`), negation flips the sign, conjunction
//! takes `min`, disjunction `max`, `G`/`F` fold `min`/`max` over the
//! shifted interval, and `U` is the standard non-strict sup-inf form. The
//! sign of the robustness value always agrees with Boolean satisfaction.
//!
//! A formula can be parsed from a small text syntax (see [`parse`]), e.g.
//! `G[0,420](sig(G) - 70 >= 0)`.

mod parse;

pub use parse::parse_formula;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CoefficientVector, Trace};

#[derive(Debug, Error)]
pub enum StlError {
    #[error("interval [{a}, {b}] from t = {t} exceeds the signal horizon ({len} samples)")]
    HorizonExceeded { a: f64, b: f64, t: usize, len: usize },
    #[error("evaluation time {t} is outside the signal ({len} samples)")]
    TimeOutsideSignal { t: usize, len: usize },
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("feature `{feature}` cannot be evaluated on a {domain} signal")]
    DomainMismatch { feature: String, domain: &'static str },
    #[error("reference coefficient `{0}` is zero; relative deviation is undefined")]
    DegenerateReference(String),
    #[error("coefficient vectors are not index-aligned")]
    Misaligned,
    #[error("parse error at byte {at}: {message}")]
    Parse { at: usize, message: String },
    #[error("empty signal")]
    EmptySignal,
}

/// Default threshold of the coefficient-deviation score: the largest
/// normalized deviation is compared against 1%.
pub const CONFORMANCE_THRESHOLD: f64 = 0.01;

/// What a predicate measures at one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Feature {
    /// Value of a named trace signal (time-domain signals only).
    SignalValue(String),
    /// Value of a named coefficient (coefficient sequences only).
    CoefficientValue(String),
    /// Largest relative deviation from a reference coefficient vector
    /// (coefficient sequences only): `max_i |(w_i - r_i) / r_i|`.
    MaxRelDeviation { reference: CoefficientVector },
}

impl Feature {
    fn name(&self) -> String {
        match self {
            Feature::SignalValue(s) => format!("sig({s})"),
            Feature::CoefficientValue(s) => format!("coeff({s})"),
            Feature::MaxRelDeviation { .. } => "maxdev".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `f >= c`
    AtLeast,
    /// `f <= c`
    AtMost,
}

/// Closed interval attached to a temporal operator, in the signal's time
/// units; `None` bound means "to the end of the signal".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: Option<f64>,
}

impl Interval {
    pub fn bounded(a: f64, b: f64) -> Self {
        Interval { a, b: Some(b) }
    }

    pub fn unbounded() -> Self {
        Interval { a: 0.0, b: None }
    }

    fn validate(&self) -> Result<(), StlError> {
        let ok = self.a >= 0.0
            && self.a.is_finite()
            && match self.b {
                Some(b) => b.is_finite() && b >= self.a,
                None => true,
            };
        if ok {
            Ok(())
        } else {
            Err(StlError::Parse {
                at: 0,
                message: format!("invalid interval [{}, {:?}]", self.a, self.b),
            })
        }
    }

    /// Sample-index window `[t + a/spacing, t + b/spacing]`, checked
    /// against the horizon.
    fn window(&self, t: usize, len: usize, spacing: f64) -> Result<(usize, usize), StlError> {
        let lo = t + (self.a / spacing).round() as usize;
        let hi = match self.b {
            Some(b) => t + (b / spacing).round() as usize,
            None => len - 1,
        };
        if hi >= len || lo > hi {
            return Err(StlError::HorizonExceeded {
                a: self.a,
                b: self.b.unwrap_or(f64::INFINITY),
                t,
                len,
            });
        }
        Ok((lo, hi))
    }
}

/// Formula AST. Operators beyond the core set are expressible as sugar
/// (e.g. `F_I phi = true U_I phi`), and `F`/`G` are kept as first-class
/// nodes because the robustness computation folds them directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StlFormula {
    True,
    Predicate {
        feature: Feature,
        direction: Direction,
        threshold: f64,
    },
    Not(Box<StlFormula>),
    And(Box<StlFormula>, Box<StlFormula>),
    Or(Box<StlFormula>, Box<StlFormula>),
    Eventually(Interval, Box<StlFormula>),
    Globally(Interval, Box<StlFormula>),
    Until(Interval, Box<StlFormula>, Box<StlFormula>),
}

impl StlFormula {
    pub fn pred(feature: Feature, direction: Direction, threshold: f64) -> Self {
        StlFormula::Predicate {
            feature,
            direction,
            threshold,
        }
    }

    // constructor, deliberately named after the operator
    #[allow(clippy::should_implement_trait)]
    pub fn not(phi: StlFormula) -> Self {
        StlFormula::Not(Box::new(phi))
    }

    pub fn and(a: StlFormula, b: StlFormula) -> Self {
        StlFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: StlFormula, b: StlFormula) -> Self {
        StlFormula::Or(Box::new(a), Box::new(b))
    }

    pub fn eventually(i: Interval, phi: StlFormula) -> Self {
        StlFormula::Eventually(i, Box::new(phi))
    }

    pub fn globally(i: Interval, phi: StlFormula) -> Self {
        StlFormula::Globally(i, Box::new(phi))
    }

    pub fn until(i: Interval, phi: StlFormula, psi: StlFormula) -> Self {
        StlFormula::Until(i, Box::new(phi), Box::new(psi))
    }

    pub fn validate(&self) -> Result<(), StlError> {
        match self {
            StlFormula::True | StlFormula::Predicate { .. } => Ok(()),
            StlFormula::Not(p) => p.validate(),
            StlFormula::And(a, b) | StlFormula::Or(a, b) => {
                a.validate()?;
                b.validate()
            }
            StlFormula::Eventually(i, p) | StlFormula::Globally(i, p) => {
                i.validate()?;
                p.validate()
            }
            StlFormula::Until(i, a, b) => {
                i.validate()?;
                a.validate()?;
                b.validate()
            }
        }
    }
}

/// A signal a formula can be evaluated over: either a sampled trace
/// (spacing = its sampling period) or a mined-coefficient sequence
/// (unit spacing).
#[derive(Debug, Clone, Copy)]
pub enum Signal<'a> {
    Trace(&'a Trace),
    Omega(&'a [CoefficientVector]),
}

impl<'a> Signal<'a> {
    pub fn len(&self) -> usize {
        match self {
            Signal::Trace(t) => t.len(),
            Signal::Omega(o) => o.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        match self {
            Signal::Trace(t) => t.tau(),
            Signal::Omega(_) => 1.0,
        }
    }

    fn feature(&self, feature: &Feature, k: usize) -> Result<f64, StlError> {
        match (self, feature) {
            (Signal::Trace(t), Feature::SignalValue(name)) => t
                .signal(name)
                .map(|s| s.values()[k])
                .ok_or_else(|| StlError::UnknownSignal(name.clone())),
            (Signal::Omega(o), Feature::CoefficientValue(name)) => o[k]
                .get(name)
                .ok_or_else(|| StlError::UnknownSignal(name.clone())),
            (Signal::Omega(o), Feature::MaxRelDeviation { reference }) => {
                max_relative_deviation(&o[k], reference)
            }
            (s, f) => Err(StlError::DomainMismatch {
                feature: f.name(),
                domain: match s {
                    Signal::Trace(_) => "time-domain",
                    Signal::Omega(_) => "coefficient-sequence",
                },
            }),
        }
    }
}

/// Quantitative robustness of `phi` over `signal` at sample `t`.
/// Positive implies Boolean satisfaction, negative implies violation.
pub fn robustness(phi: &StlFormula, signal: Signal, t: usize) -> Result<f64, StlError> {
    if signal.is_empty() {
        return Err(StlError::EmptySignal);
    }
    if t >= signal.len() {
        return Err(StlError::TimeOutsideSignal {
            t,
            len: signal.len(),
        });
    }
    eval_rho(phi, signal, t)
}

fn eval_rho(phi: &StlFormula, signal: Signal, t: usize) -> Result<f64, StlError> {
    match phi {
        StlFormula::True => Ok(f64::INFINITY),
        StlFormula::Predicate {
            feature,
            direction,
            threshold,
        } => {
            let f = signal.feature(feature, t)?;
            Ok(match direction {
                Direction::AtLeast => f - threshold,
                Direction::AtMost => threshold - f,
            })
        }
        StlFormula::Not(p) => Ok(-eval_rho(p, signal, t)?),
        StlFormula::And(a, b) => Ok(eval_rho(a, signal, t)?.min(eval_rho(b, signal, t)?)),
        StlFormula::Or(a, b) => Ok(eval_rho(a, signal, t)?.max(eval_rho(b, signal, t)?)),
        StlFormula::Globally(i, p) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            let mut acc = f64::INFINITY;
            for k in lo..=hi {
                acc = acc.min(eval_rho(p, signal, k)?);
            }
            Ok(acc)
        }
        StlFormula::Eventually(i, p) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            let mut acc = f64::NEG_INFINITY;
            for k in lo..=hi {
                acc = acc.max(eval_rho(p, signal, k)?);
            }
            Ok(acc)
        }
        StlFormula::Until(i, a, b) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            // rho(a U_I b, t) = max_{t' in window} min(rho(b, t'),
            //                     min_{t <= t'' < t'} rho(a, t''))
            let mut best = f64::NEG_INFINITY;
            let mut prefix = f64::INFINITY; // min of rho(a) over [t, t')
            for k in t..=hi {
                if k >= lo {
                    let rb = eval_rho(b, signal, k)?;
                    best = best.max(rb.min(prefix));
                }
                prefix = prefix.min(eval_rho(a, signal, k)?);
            }
            Ok(best)
        }
    }
}

/// Boolean satisfaction under the same discrete semantics. Used as the
/// independent check that robustness signs are sound.
pub fn satisfies(phi: &StlFormula, signal: Signal, t: usize) -> Result<bool, StlError> {
    if signal.is_empty() {
        return Err(StlError::EmptySignal);
    }
    if t >= signal.len() {
        return Err(StlError::TimeOutsideSignal {
            t,
            len: signal.len(),
        });
    }
    eval_bool(phi, signal, t)
}

fn eval_bool(phi: &StlFormula, signal: Signal, t: usize) -> Result<bool, StlError> {
    match phi {
        StlFormula::True => Ok(true),
        StlFormula::Predicate {
            feature,
            direction,
            threshold,
        } => {
            let f = signal.feature(feature, t)?;
            Ok(match direction {
                Direction::AtLeast => f >= *threshold,
                Direction::AtMost => f <= *threshold,
            })
        }
        StlFormula::Not(p) => Ok(!eval_bool(p, signal, t)?),
        StlFormula::And(a, b) => Ok(eval_bool(a, signal, t)? && eval_bool(b, signal, t)?),
        StlFormula::Or(a, b) => Ok(eval_bool(a, signal, t)? || eval_bool(b, signal, t)?),
        StlFormula::Globally(i, p) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            for k in lo..=hi {
                if !eval_bool(p, signal, k)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        StlFormula::Eventually(i, p) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            for k in lo..=hi {
                if eval_bool(p, signal, k)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        StlFormula::Until(i, a, b) => {
            let (lo, hi) = i.window(t, signal.len(), signal.spacing())?;
            let mut prefix_holds = true;
            for k in t..=hi {
                if k >= lo && prefix_holds && eval_bool(b, signal, k)? {
                    return Ok(true);
                }
                if !eval_bool(a, signal, k)? {
                    // prefix breaks at k: b must have held at some t' <= k
                    prefix_holds = false;
                }
                if !prefix_holds && k >= lo {
                    return Ok(false);
                }
            }
            Ok(false)
        }
    }
}

/// Largest relative coefficient deviation `max_i |(w_i - r_i) / r_i|`.
pub fn max_relative_deviation(
    omega: &CoefficientVector,
    reference: &CoefficientVector,
) -> Result<f64, StlError> {
    if !omega.is_aligned_with(reference) {
        return Err(StlError::Misaligned);
    }
    let mut worst = 0.0f64;
    for (w, r) in omega.entries().iter().zip(reference.entries()) {
        if r.value == 0.0 {
            return Err(StlError::DegenerateReference(r.name.clone()));
        }
        worst = worst.max(((w.value - r.value) / r.value).abs());
    }
    Ok(worst)
}

/// Coefficient-conformance score: the largest normalized deviation of
/// `omega` from `omega_ref`, minus the given threshold. By construction
/// this is a *deviation* score (larger = worse): a vector equal to the
/// reference scores `-threshold`.
pub fn conformance_robustness_with_threshold(
    omega: &CoefficientVector,
    omega_ref: &CoefficientVector,
    threshold: f64,
) -> Result<f64, StlError> {
    Ok(max_relative_deviation(omega, omega_ref)? - threshold)
}

/// [`conformance_robustness_with_threshold`] at the default 1% threshold.
pub fn conformance_robustness(
    omega: &CoefficientVector,
    omega_ref: &CoefficientVector,
) -> Result<f64, StlError> {
    conformance_robustness_with_threshold(omega, omega_ref, CONFORMANCE_THRESHOLD)
}

/// The safety property of the insulin case study: glucose stays above
/// 70 mg/dl over the whole trace. `G(sig(G) - 70 >= 0)`.
pub fn safety_formula() -> StlFormula {
    StlFormula::globally(
        Interval::unbounded(),
        StlFormula::pred(
            Feature::SignalValue("G".to_string()),
            Direction::AtLeast,
            70.0,
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelTemplate, PatternEntry};

    fn trace1(name: &str, values: Vec<f64>) -> Trace {
        Trace::from_columns(0.0, 1.0, vec![(name, values)]).unwrap()
    }

    fn sig_ge(name: &str, c: f64) -> StlFormula {
        StlFormula::pred(Feature::SignalValue(name.into()), Direction::AtLeast, c)
    }

    #[test]
    fn globally_on_constant_trace() {
        let t = trace1("x", vec![120.0; 32]);
        let phi = StlFormula::globally(Interval::bounded(0.0, 31.0), sig_ge("x", 70.0));
        assert_eq!(robustness(&phi, Signal::Trace(&t), 0).unwrap(), 50.0);
    }

    #[test]
    fn eventually_hand_example() {
        let t = trace1("x", vec![0.0, 0.5, 3.0]);
        let phi = StlFormula::eventually(Interval::bounded(0.0, 2.0), sig_ge("x", 1.0));
        // max(0 - 1, 0.5 - 1, 3 - 1) = 2
        assert_eq!(robustness(&phi, Signal::Trace(&t), 0).unwrap(), 2.0);
    }

    #[test]
    fn negation_flips_robustness() {
        let t = trace1("x", vec![1.0, -2.0, 0.5, 4.0]);
        let phi = StlFormula::eventually(Interval::bounded(0.0, 3.0), sig_ge("x", 1.5));
        let rho = robustness(&phi, Signal::Trace(&t), 0).unwrap();
        let neg = robustness(&StlFormula::not(phi), Signal::Trace(&t), 0).unwrap();
        assert_eq!(neg, -rho);
    }

    #[test]
    fn horizon_violation_is_an_error_not_a_truncation() {
        let t = trace1("x", vec![0.0, 1.0, 2.0]);
        let phi = StlFormula::globally(Interval::bounded(0.0, 5.0), sig_ge("x", 0.0));
        assert!(matches!(
            robustness(&phi, Signal::Trace(&t), 0),
            Err(StlError::HorizonExceeded { .. })
        ));
        // and from a shifted start
        let phi2 = StlFormula::globally(Interval::bounded(0.0, 2.0), sig_ge("x", 0.0));
        assert!(robustness(&phi2, Signal::Trace(&t), 1).is_err());
        assert!(robustness(&phi2, Signal::Trace(&t), 0).is_ok());
    }

    #[test]
    fn until_matches_sup_inf_form() {
        // a = [5, 4, -1, 3], b = [-2, 1, 6, 0]; window [0, 3]
        let t = Trace::from_columns(
            0.0,
            1.0,
            vec![
                ("a", vec![5.0, 4.0, -1.0, 3.0]),
                ("b", vec![-2.0, 1.0, 6.0, 0.0]),
            ],
        )
        .unwrap();
        let phi = StlFormula::until(
            Interval::bounded(0.0, 3.0),
            sig_ge("a", 0.0),
            sig_ge("b", 0.0),
        );
        // t'=0: min(b0, empty prefix=+inf) = -2
        // t'=1: min(b1=1, a0=5) = 1
        // t'=2: min(b2=6, min(a0,a1)=4) = 4
        // t'=3: min(b3=0, min(a0,a1,a2)=-1) = -1
        // max = 4
        assert_eq!(robustness(&phi, Signal::Trace(&t), 0).unwrap(), 4.0);
    }

    #[test]
    fn safety_formula_examples() {
        let boundary = trace1("G", vec![70.0; 10]);
        assert_eq!(
            robustness(&safety_formula(), Signal::Trace(&boundary), 0).unwrap(),
            0.0
        );
        let mut dip = vec![120.0; 10];
        dip[6] = 55.0;
        let dipped = trace1("G", dip);
        assert_eq!(
            robustness(&safety_formula(), Signal::Trace(&dipped), 0).unwrap(),
            -15.0
        );
    }

    #[test]
    fn conformance_score_of_reference_is_minus_threshold() {
        let t = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeNegative]],
            vec![PatternEntry::FreePositive],
            vec![true],
        )
        .unwrap();
        let r = CoefficientVector::from_values(&t, &[-0.5, 2.0]).unwrap();
        assert_eq!(conformance_robustness(&r, &r).unwrap(), -0.01);
    }

    #[test]
    fn conformance_score_is_scale_invariant() {
        let t = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeAny]],
            vec![PatternEntry::FreeAny],
            vec![true],
        )
        .unwrap();
        let w = CoefficientVector::from_values(&t, &[-0.4, 1.5]).unwrap();
        let r = CoefficientVector::from_values(&t, &[-0.5, 2.0]).unwrap();
        let base = conformance_robustness(&w, &r).unwrap();
        for &s in &[2.0, -3.0, 0.125] {
            let ws = CoefficientVector::from_values(&t, &[-0.4 * s, 1.5 * s]).unwrap();
            let rs = CoefficientVector::from_values(&t, &[-0.5 * s, 2.0 * s]).unwrap();
            let scaled = conformance_robustness(&ws, &rs).unwrap();
            assert!((scaled - base).abs() < 1e-12);
        }
    }

    #[test]
    fn conformance_rejects_zero_reference() {
        let t = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeAny]],
            vec![PatternEntry::Zero],
            vec![true],
        )
        .unwrap();
        let w = CoefficientVector::from_values(&t, &[1.0]).unwrap();
        let r = CoefficientVector::from_values(&t, &[0.0]).unwrap();
        assert!(matches!(
            conformance_robustness(&w, &r),
            Err(StlError::DegenerateReference(_))
        ));
    }

    #[test]
    fn features_respect_signal_domain() {
        let t = trace1("x", vec![0.0, 1.0]);
        let phi = StlFormula::pred(
            Feature::CoefficientValue("a(x,x)".into()),
            Direction::AtLeast,
            0.0,
        );
        assert!(matches!(
            robustness(&phi, Signal::Trace(&t), 0),
            Err(StlError::DomainMismatch { .. })
        ));
    }

    #[test]
    fn coefficient_sequence_evaluation() {
        let t = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeAny]],
            vec![PatternEntry::Zero],
            vec![true],
        )
        .unwrap();
        let omegas: Vec<CoefficientVector> = [-0.5, -0.4, -0.9]
            .iter()
            .map(|&v| CoefficientVector::from_values(&t, &[v]).unwrap())
            .collect();
        let phi = StlFormula::globally(
            Interval::bounded(0.0, 2.0),
            StlFormula::pred(
                Feature::CoefficientValue("a(x,x)".into()),
                Direction::AtMost,
                -0.3,
            ),
        );
        // min over k of (-0.3 - w_k) = min(0.2, 0.1, 0.6) = 0.1
        let rho = robustness(&phi, Signal::Omega(&omegas), 0).unwrap();
        assert!((rho - 0.1).abs() < 1e-12);
    }
}
