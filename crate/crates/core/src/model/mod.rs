//! Physics-model formalism: linear time-invariant ODE structure, coefficient
//! vectors, trace containers, and a reference integrator.
//!
//! A plant is `dX/dt = A X + B U`, `Y = beta X`, where `A` is an `n x n`
//! coefficient matrix, `B` is an `n x n` diagonal input-gain matrix and
//! `beta` is a diagonal 0/1 observability mask. The *structure* (which
//! entries are non-zero and their sign constraints) is a [`ModelTemplate`];
//! the concrete values bound to the non-zero slots form a
//! [`CoefficientVector`].
//!
//! Time is a plain `f64` throughout. The CSV schema names the time column
//! `time_s`; the insulin case study keeps all rates in 1/min and uses
//! minutes as its time unit, which is consistent as long as one unit is
//! used end to end.

mod integrate;
mod io;
mod trace;

pub use integrate::{integrate_reference, integrate_reference_with_drift, trace_distance};
pub use trace::{InputSchedule, Trace, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid input schedule: {0}")]
    InvalidSchedule(String),
    #[error("coefficient vector does not bind template: {0}")]
    CoefficientMismatch(String),
    #[error("trace shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("simulation diverged at step {step}: state is not finite")]
    DivergedSimulation { step: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sign constraint on one slot of the `A` or `B` pattern.
///
/// A `Zero` slot carries no coefficient at all; the three free variants
/// constrain the sign of the value mined into the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternEntry {
    Zero,
    #[serde(rename = "pos")]
    FreePositive,
    #[serde(rename = "neg")]
    FreeNegative,
    #[serde(rename = "any")]
    FreeAny,
}

impl PatternEntry {
    pub fn is_free(self) -> bool {
        self != PatternEntry::Zero
    }

    /// Does `value` satisfy this slot's sign constraint?
    pub fn admits(self, value: f64) -> bool {
        match self {
            PatternEntry::Zero => value == 0.0,
            PatternEntry::FreePositive => value >= 0.0,
            PatternEntry::FreeNegative => value <= 0.0,
            PatternEntry::FreeAny => true,
        }
    }

    /// Clamp `value` onto the admissible half-line.
    pub fn project(self, value: f64) -> f64 {
        match self {
            PatternEntry::Zero => 0.0,
            PatternEntry::FreePositive => value.max(0.0),
            PatternEntry::FreeNegative => value.min(0.0),
            PatternEntry::FreeAny => value,
        }
    }

    /// +1.0 / -1.0 / 0.0 hint used by weight initialization.
    pub fn sign_hint(self) -> f64 {
        match self {
            PatternEntry::Zero => 0.0,
            PatternEntry::FreePositive => 1.0,
            PatternEntry::FreeNegative => -1.0,
            PatternEntry::FreeAny => 1.0,
        }
    }
}

/// One free (non-zero) slot of a template, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Entry `a[row][col]` of the coefficient matrix.
    A { row: usize, col: usize },
    /// Diagonal entry `b[index][index]` of the input-gain matrix.
    B { index: usize },
}

/// Symbolic structure of the LTI ODE: variable/input names, the sparsity
/// and sign pattern of `A` and diagonal `B`, and the observability mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    variables: Vec<String>,
    inputs: Vec<String>,
    a_pattern: Vec<Vec<PatternEntry>>,
    b_pattern: Vec<PatternEntry>,
    beta: Vec<bool>,
}

impl ModelTemplate {
    pub fn new(
        variables: Vec<String>,
        inputs: Vec<String>,
        a_pattern: Vec<Vec<PatternEntry>>,
        b_pattern: Vec<PatternEntry>,
        beta: Vec<bool>,
    ) -> Result<Self, ModelError> {
        let t = ModelTemplate {
            variables,
            inputs,
            a_pattern,
            b_pattern,
            beta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        if n == 0 {
            return Err(ModelError::InvalidTemplate("no variables".into()));
        }
        if self.inputs.len() != n {
            return Err(ModelError::InvalidTemplate(format!(
                "expected {n} input names (one potential channel per variable), got {}",
                self.inputs.len()
            )));
        }
        if self.a_pattern.len() != n || self.a_pattern.iter().any(|row| row.len() != n) {
            return Err(ModelError::InvalidTemplate(format!("a_pattern is not {n}x{n}")));
        }
        if self.b_pattern.len() != n {
            return Err(ModelError::InvalidTemplate(format!(
                "b_pattern must have {n} diagonal entries"
            )));
        }
        if self.beta.len() != n {
            return Err(ModelError::InvalidTemplate(format!("beta must have {n} entries")));
        }
        if !self.beta.iter().any(|&b| b) {
            return Err(ModelError::InvalidTemplate(
                "at least one variable must be observable".into(),
            ));
        }
        for (i, row) in self.a_pattern.iter().enumerate() {
            if !row.iter().any(|e| e.is_free()) {
                return Err(ModelError::InvalidTemplate(format!(
                    "row {i} ({}) of a_pattern has no non-zero entry (dead variable)",
                    self.variables[i]
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self.variables.iter().chain(self.inputs.iter()) {
            if !seen.insert(name.as_str()) {
                return Err(ModelError::InvalidTemplate(format!(
                    "duplicate variable/input name `{name}`"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn a_pattern(&self) -> &[Vec<PatternEntry>] {
        &self.a_pattern
    }

    pub fn b_pattern(&self) -> &[PatternEntry] {
        &self.b_pattern
    }

    pub fn beta(&self) -> &[bool] {
        &self.beta
    }

    pub fn is_observable(&self, var: usize) -> bool {
        self.beta[var]
    }

    pub fn observable_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.beta[i]).collect()
    }

    /// Indices of variables with a non-zero input channel (`b_ii != 0`).
    pub fn active_input_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.b_pattern[i].is_free()).collect()
    }

    /// Free slots in canonical order: row-major over `A`, then the diagonal
    /// of `B`. Two coefficient vectors over the same template are
    /// index-aligned because both follow this order.
    pub fn free_slots(&self) -> Vec<Slot> {
        let mut slots = Vec::new();
        for (row, entries) in self.a_pattern.iter().enumerate() {
            for (col, e) in entries.iter().enumerate() {
                if e.is_free() {
                    slots.push(Slot::A { row, col });
                }
            }
        }
        for (index, e) in self.b_pattern.iter().enumerate() {
            if e.is_free() {
                slots.push(Slot::B { index });
            }
        }
        slots
    }

    pub fn slot_pattern(&self, slot: Slot) -> PatternEntry {
        match slot {
            Slot::A { row, col } => self.a_pattern[row][col],
            Slot::B { index } => self.b_pattern[index],
        }
    }

    pub fn slot_name(&self, slot: Slot) -> String {
        match slot {
            Slot::A { row, col } => format!("a({},{})", self.variables[row], self.variables[col]),
            Slot::B { index } => format!("b({})", self.variables[index]),
        }
    }

    /// Expand a coefficient vector into the dense `A` matrix and `B`
    /// diagonal. Zero-pattern slots stay exactly zero.
    pub fn assemble(&self, omega: &CoefficientVector) -> Result<(Vec<Vec<f64>>, Vec<f64>), ModelError> {
        omega.check_binds(self)?;
        let n = self.n();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for (slot, value) in self.free_slots().iter().zip(omega.values()) {
            match *slot {
                Slot::A { row, col } => a[row][col] = *value,
                Slot::B { index } => b[index] = *value,
            }
        }
        Ok((a, b))
    }

    /// SHA-256 over the canonical JSON form, used as provenance in
    /// serialized calibrations.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("template serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One named coefficient value bound to a free template slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffEntry {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub units: String,
}

/// A named, ordered vector of concrete coefficient values; binds one value
/// to each free slot of a [`ModelTemplate`] in canonical slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    entries: Vec<CoeffEntry>,
}

impl CoefficientVector {
    /// Bind `values` (canonical slot order) to `template`'s free slots.
    /// Every value must satisfy its slot's sign constraint.
    pub fn from_values(template: &ModelTemplate, values: &[f64]) -> Result<Self, ModelError> {
        Self::from_values_with_units(template, values, &[])
    }

    /// Same as [`CoefficientVector::from_values`] with per-slot unit labels
    /// (padded with empty labels when shorter than the slot list).
    pub fn from_values_with_units(
        template: &ModelTemplate,
        values: &[f64],
        units: &[&str],
    ) -> Result<Self, ModelError> {
        let slots = template.free_slots();
        if values.len() != slots.len() {
            return Err(ModelError::CoefficientMismatch(format!(
                "template has {} free slots, got {} values",
                slots.len(),
                values.len()
            )));
        }
        let mut entries = Vec::with_capacity(slots.len());
        for (i, (&slot, &value)) in slots.iter().zip(values).enumerate() {
            if !value.is_finite() {
                return Err(ModelError::CoefficientMismatch(format!(
                    "slot {} is not finite",
                    template.slot_name(slot)
                )));
            }
            let pattern = template.slot_pattern(slot);
            if !pattern.admits(value) {
                return Err(ModelError::CoefficientMismatch(format!(
                    "slot {} value {value} violates its {pattern:?} sign constraint",
                    template.slot_name(slot)
                )));
            }
            entries.push(CoeffEntry {
                name: template.slot_name(slot),
                value,
                units: units.get(i).map(|u| u.to_string()).unwrap_or_default(),
            });
        }
        Ok(CoefficientVector { entries })
    }

    pub fn entries(&self) -> &[CoeffEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.entries.iter().map(|e| &e.value)
    }

    pub fn values_vec(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    /// Verify this vector binds `template`: same slot count and names, signs
    /// admissible.
    pub fn check_binds(&self, template: &ModelTemplate) -> Result<(), ModelError> {
        let slots = template.free_slots();
        if slots.len() != self.entries.len() {
            return Err(ModelError::CoefficientMismatch(format!(
                "template has {} free slots, vector has {}",
                slots.len(),
                self.entries.len()
            )));
        }
        for (&slot, entry) in slots.iter().zip(&self.entries) {
            let expect = template.slot_name(slot);
            if entry.name != expect {
                return Err(ModelError::CoefficientMismatch(format!(
                    "slot name mismatch: expected `{expect}`, found `{}`",
                    entry.name
                )));
            }
            if !template.slot_pattern(slot).admits(entry.value) {
                return Err(ModelError::CoefficientMismatch(format!(
                    "slot {expect} value {} violates its sign constraint",
                    entry.value
                )));
            }
        }
        Ok(())
    }

    /// Check index alignment with another vector (same names in order).
    pub fn is_aligned_with(&self, other: &CoefficientVector) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn decay_template() -> ModelTemplate {
        ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeNegative]],
            vec![PatternEntry::Zero],
            vec![true],
        )
        .unwrap()
    }

    #[test]
    fn template_rejects_all_hidden() {
        let err = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeAny]],
            vec![PatternEntry::Zero],
            vec![false],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InvalidTemplate(_)));
    }

    #[test]
    fn template_rejects_dead_row() {
        let err = ModelTemplate::new(
            vec!["x".into(), "y".into()],
            vec!["u1".into(), "u2".into()],
            vec![
                vec![PatternEntry::FreeAny, PatternEntry::Zero],
                vec![PatternEntry::Zero, PatternEntry::Zero],
            ],
            vec![PatternEntry::Zero, PatternEntry::Zero],
            vec![true, true],
        )
        .unwrap_err();
        assert!(err.to_string().contains("dead variable"));
    }

    #[test]
    fn canonical_slot_order_is_row_major_then_b() {
        let t = ModelTemplate::new(
            vec!["x".into(), "y".into()],
            vec!["u1".into(), "u2".into()],
            vec![
                vec![PatternEntry::FreeNegative, PatternEntry::FreeAny],
                vec![PatternEntry::Zero, PatternEntry::FreeNegative],
            ],
            vec![PatternEntry::FreePositive, PatternEntry::Zero],
            vec![true, false],
        )
        .unwrap();
        let names: Vec<String> = t.free_slots().iter().map(|&s| t.slot_name(s)).collect();
        assert_eq!(names, vec!["a(x,x)", "a(x,y)", "a(y,y)", "b(x)"]);
    }

    #[test]
    fn coefficient_sign_constraints_enforced() {
        let t = decay_template();
        assert!(CoefficientVector::from_values(&t, &[0.1]).is_err());
        let cv = CoefficientVector::from_values(&t, &[-0.1]).unwrap();
        assert_eq!(cv.get("a(x,x)"), Some(-0.1));
    }

    #[test]
    fn assemble_places_values() {
        let t = ModelTemplate::new(
            vec!["x".into(), "y".into()],
            vec!["u1".into(), "u2".into()],
            vec![
                vec![PatternEntry::FreeNegative, PatternEntry::Zero],
                vec![PatternEntry::FreePositive, PatternEntry::FreeNegative],
            ],
            vec![PatternEntry::Zero, PatternEntry::FreeAny],
            vec![false, true],
        )
        .unwrap();
        let cv = CoefficientVector::from_values(&t, &[-1.0, 2.0, -3.0, -4.0]).unwrap();
        let (a, b) = t.assemble(&cv).unwrap();
        assert_eq!(a, vec![vec![-1.0, 0.0], vec![2.0, -3.0]]);
        assert_eq!(b, vec![0.0, -4.0]);
    }

    #[test]
    fn template_hash_is_stable_and_content_sensitive() {
        let t1 = decay_template();
        let t2 = decay_template();
        assert_eq!(t1.content_hash(), t2.content_hash());
        let t3 = ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![PatternEntry::FreeAny]],
            vec![PatternEntry::Zero],
            vec![true],
        )
        .unwrap();
        assert_ne!(t1.content_hash(), t3.content_hash());
    }
}
