//! Reference integration of the LTI plant and trace distance.
//!
//! The reference integrator is a classical fourth-order Runge-Kutta scheme
//! with a fixed step equal to the sampling period. Inputs are applied with
//! a zero-order hold: each step `k` sees the schedule sampled at the left
//! edge (`InputSchedule::sample(.., k, tau)`), so the integrator and the
//! Euler forward pass consume identical input sequences. The scheme is the
//! test suite's ground-truth oracle; it is deterministic and, for inputs
//! held constant within a step, carries fourth-order local truncation
//! accuracy.

use std::collections::BTreeMap;

use super::trace::{InputSchedule, Trace, Trajectory};
use super::{CoefficientVector, ModelError, ModelTemplate};

/// Integrate `dX/dt = A X + B U` from `x0` over `steps` fixed steps of
/// width `tau`, returning all `n` variables (observability ignored) as a
/// trace of `steps + 1` samples.
pub fn integrate_reference(
    template: &ModelTemplate,
    omega: &CoefficientVector,
    u: &InputSchedule,
    x0: &[f64],
    tau: f64,
    steps: usize,
) -> Result<Trace, ModelError> {
    integrate_reference_with_drift(template, omega, u, x0, tau, steps, None)
}

/// [`integrate_reference`] with an optional constant drift `w`, integrating
/// `dX/dt = A X + B U + w`. The plain LTI form of the plant has no affine
/// term; the drift hook exists for case studies that carry a constant
/// offset (e.g. a basal-insulin term) without widening the template.
pub fn integrate_reference_with_drift(
    template: &ModelTemplate,
    omega: &CoefficientVector,
    u: &InputSchedule,
    x0: &[f64],
    tau: f64,
    steps: usize,
    drift: Option<&[f64]>,
) -> Result<Trace, ModelError> {
    let n = template.n();
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(ModelError::InvalidTrace(format!(
            "sampling period must be positive, got {tau}"
        )));
    }
    if steps == 0 {
        return Err(ModelError::InvalidTrace("need at least one step".into()));
    }
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidTrace(format!(
            "x0 must be {n} finite values"
        )));
    }
    if let Some(w) = drift {
        if w.len() != n || w.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTrace(format!(
                "drift must be {n} finite values"
            )));
        }
    }
    let (a, b) = template.assemble(omega)?;

    let deriv = |x: &[f64], uk: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = b[i] * uk[i];
            if let Some(w) = drift {
                acc += w[i];
            }
            let row = &a[i];
            for j in 0..n {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
    };

    let mut history = vec![vec![0.0f64; steps + 1]; n];
    let mut x = x0.to_vec();
    for i in 0..n {
        history[i][0] = x[i];
    }

    let mut uk = vec![0.0f64; n];
    let mut k1 = vec![0.0f64; n];
    let mut k2 = vec![0.0f64; n];
    let mut k3 = vec![0.0f64; n];
    let mut k4 = vec![0.0f64; n];
    let mut stage = vec![0.0f64; n];

    for step in 0..steps {
        for (slot, name) in uk.iter_mut().zip(template.inputs()) {
            *slot = u.sample(name, step, tau);
        }
        deriv(&x, &uk, &mut k1);
        for i in 0..n {
            stage[i] = x[i] + 0.5 * tau * k1[i];
        }
        deriv(&stage, &uk, &mut k2);
        for i in 0..n {
            stage[i] = x[i] + 0.5 * tau * k2[i];
        }
        deriv(&stage, &uk, &mut k3);
        for i in 0..n {
            stage[i] = x[i] + tau * k3[i];
        }
        deriv(&stage, &uk, &mut k4);
        for i in 0..n {
            x[i] += tau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::DivergedSimulation { step: step + 1 });
        }
        for i in 0..n {
            history[i][step + 1] = x[i];
        }
    }

    let mut signals = BTreeMap::new();
    for (i, values) in history.into_iter().enumerate() {
        signals.insert(
            template.variables()[i].clone(),
            Trajectory::new(0.0, tau, values)?,
        );
    }
    Trace::new(signals)
}

/// Root-mean-square error per shared signal, averaged over signals.
/// Zero iff the traces are identical.
pub fn trace_distance(a: &Trace, b: &Trace) -> Result<f64, ModelError> {
    if !a.same_shape(b) {
        return Err(ModelError::ShapeMismatch(format!(
            "signals {:?} (len {}) vs {:?} (len {})",
            a.names().collect::<Vec<_>>(),
            a.len(),
            b.names().collect::<Vec<_>>(),
            b.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (name, ta) in a.signals() {
        let tb = b.signal(name).expect("same shape");
        let sq: f64 = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += (sq / ta.len() as f64).sqrt();
        count += 1;
    }
    Ok(total / count as f64)
}
