//! Recurrent network induced from an ODE template, and coefficient mining.
//!
//! The network has one cell per model variable. Cell `i` receives the
//! outputs of exactly the cells `{j : a_ij != 0}` plus its external input
//! channel when `b_ii != 0`, so the topology mirrors the template's
//! sparsity pattern and the trainable weights *are* the physical
//! coefficients. One step of the forward pass is
//!
//! ```text
//! x_i[k+1] = x_i[k] + tau * (sum_j a_ij * x_j[k] + b_ii * u_i[k])
//! ```
//!
//! i.e. the forward-Euler discretization of `dX/dt = A X + B U`. A single
//! Euler step of `dx/dt = a x` carries relative error `(a tau)^2 / 2`, so
//! the step admits a per-step error factor `psi` exactly when
//! `tau <= sqrt(2 psi) / |a_ii|` for every diagonal entry; see
//! [`admissible_step`].
//!
//! Training ([`mine_coefficients`]) runs gradient descent with per-weight
//! first/second-moment step scaling (Adam) on the mean squared replication
//! error of the observable signals, with gradients obtained by
//! backpropagation through time under weight sharing, and sign constraints
//! enforced by projection after every step.

mod train;

pub use train::{
    gradient, loss, mine_coefficients, mine_trace_sequence, LossSummary, MiningResult,
    TrainingConfig,
};

use thiserror::Error;

use crate::model::{
    CoefficientVector, InputSchedule, ModelError, ModelTemplate, Slot, Trace, Trajectory,
};

#[derive(Debug, Error)]
pub enum RnnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling period mismatch: network tau = {net}, trace tau = {trace}")]
    TauMismatch { net: f64, trace: f64 },
    #[error("missing input signal `{0}` in trace")]
    MissingSignal(String),
    #[error("forward pass diverged at step {step}: state is not finite (tau too large or unstable weights)")]
    DivergedForwardPass { step: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One recurrent cell: the state update for a single model variable.
#[derive(Debug, Clone)]
pub struct RnnCell {
    /// Incoming connections as (source variable, weight slot) pairs.
    pub connections: Vec<(usize, usize)>,
    /// Weight slot of the external input tap, when `b_ii != 0`.
    pub input_tap: Option<usize>,
}

/// Recurrent network whose structure is induced from a [`ModelTemplate`]
/// and whose weight vector is a [`CoefficientVector`] over that template.
#[derive(Debug, Clone)]
pub struct DynamicsRnn {
    template: ModelTemplate,
    cells: Vec<RnnCell>,
    slots: Vec<Slot>,
    weights: Vec<f64>,
    tau: f64,
}

/// External inputs for a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Inputs<'a> {
    /// Sample a schedule at the network's step width.
    Schedule(&'a InputSchedule),
    /// Read input channels from trace signals named after the template's
    /// input names.
    Trace(&'a Trace),
    /// All inputs identically zero.
    None,
}

impl DynamicsRnn {
    /// Build the network for `template`: one cell per variable, a
    /// connection from cell `j` to cell `i` for every free `a_ij`, and an
    /// external input tap for every free `b_ii`. Weights start at a small
    /// sign-respecting placeholder; [`mine_coefficients`] replaces them
    /// with its configured initialization before training.
    pub fn induce(template: &ModelTemplate, tau: f64) -> Result<Self, RnnError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(RnnError::InvalidConfig(format!(
                "step width must be positive, got {tau}"
            )));
        }
        template.validate()?;
        let slots = template.free_slots();
        let slot_index = |target: Slot| slots.iter().position(|&s| s == target).unwrap();
        let mut cells = Vec::with_capacity(template.n());
        for i in 0..template.n() {
            let mut connections = Vec::new();
            for j in 0..template.n() {
                if template.a_pattern()[i][j].is_free() {
                    connections.push((j, slot_index(Slot::A { row: i, col: j })));
                }
            }
            let input_tap = template.b_pattern()[i]
                .is_free()
                .then(|| slot_index(Slot::B { index: i }));
            cells.push(RnnCell {
                connections,
                input_tap,
            });
        }
        let weights = slots
            .iter()
            .map(|&s| template.slot_pattern(s).sign_hint() * 0.1)
            .collect();
        Ok(DynamicsRnn {
            template: template.clone(),
            cells,
            slots,
            weights,
            tau,
        })
    }

    pub fn template(&self) -> &ModelTemplate {
        &self.template
    }

    pub fn cells(&self) -> &[RnnCell] {
        &self.cells
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of trainable weights (= free template slots).
    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), RnnError> {
        if weights.len() != self.weights.len() {
            return Err(RnnError::InvalidConfig(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(RnnError::InvalidConfig("non-finite weight".into()));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    /// Load weights from a coefficient vector over the same template.
    pub fn set_coefficients(&mut self, omega: &CoefficientVector) -> Result<(), RnnError> {
        omega.check_binds(&self.template)?;
        let values = omega.values_vec();
        self.weights.copy_from_slice(&values);
        Ok(())
    }

    /// Current weights as a named coefficient vector. Fails if projection
    /// has not kept the weights inside their sign constraints (it always
    /// does; this is a safety net).
    pub fn coefficients(&self) -> Result<CoefficientVector, RnnError> {
        Ok(CoefficientVector::from_values(&self.template, &self.weights)?)
    }

    /// Total edge count: cell-to-cell connections plus input taps.
    pub fn edge_count(&self) -> (usize, usize) {
        let conns = self.cells.iter().map(|c| c.connections.len()).sum();
        let taps = self.cells.iter().filter(|c| c.input_tap.is_some()).count();
        (conns, taps)
    }

    /// Dense `A` matrix and `B` diagonal assembled from the current
    /// weights.
    pub fn dense(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.template.n();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for (&slot, &w) in self.slots.iter().zip(&self.weights) {
            match slot {
                Slot::A { row, col } => a[row][col] = w,
                Slot::B { index } => b[index] = w,
            }
        }
        (a, b)
    }

    pub(crate) fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Resolve the per-variable input sequences for `steps` update steps.
    /// Channels without a free `b_ii` are never read.
    pub(crate) fn input_matrix(&self, inputs: Inputs, steps: usize) -> Result<Vec<Vec<f64>>, RnnError> {
        let n = self.template.n();
        let mut u = vec![Vec::new(); n];
        for (i, slot) in u.iter_mut().enumerate() {
            if self.cells[i].input_tap.is_none() {
                continue;
            }
            let name = &self.template.inputs()[i];
            *slot = match inputs {
                Inputs::None => vec![0.0; steps],
                Inputs::Schedule(s) => (0..steps).map(|k| s.sample(name, k, self.tau)).collect(),
                Inputs::Trace(t) => {
                    let traj = t
                        .signal(name)
                        .ok_or_else(|| RnnError::MissingSignal(name.clone()))?;
                    if traj.len() < steps {
                        return Err(RnnError::InvalidConfig(format!(
                            "input signal `{name}` has {} samples, need {steps}",
                            traj.len()
                        )));
                    }
                    traj.values()[..steps].to_vec()
                }
            };
        }
        Ok(u)
    }

    /// Run the Euler recurrence for `steps` steps from `x0`, returning the
    /// full state history as `history[k][i]` (sample-major).
    pub(crate) fn run(
        &self,
        u: &[Vec<f64>],
        x0: &[f64],
        steps: usize,
    ) -> Result<Vec<f64>, RnnError> {
        let n = self.template.n();
        if x0.len() != n {
            return Err(RnnError::InvalidConfig(format!(
                "x0 must have {n} entries, got {}",
                x0.len()
            )));
        }
        let (a, b) = self.dense();
        let mut history = vec![0.0f64; (steps + 1) * n];
        history[..n].copy_from_slice(x0);
        for k in 0..steps {
            let (prev, rest) = history.split_at_mut((k + 1) * n);
            let xk = &prev[k * n..];
            let next = &mut rest[..n];
            for i in 0..n {
                let mut rate = 0.0;
                let row = &a[i];
                for j in 0..n {
                    rate += row[j] * xk[j];
                }
                if !u[i].is_empty() {
                    rate += b[i] * u[i][k];
                }
                next[i] = xk[i] + self.tau * rate;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(RnnError::DivergedForwardPass { step: k + 1 });
            }
        }
        Ok(history)
    }

    /// Forward pass over `steps` update steps: returns every variable
    /// (hidden ones included) as a trace of `steps + 1` samples. The pass
    /// is deterministic and linear in `(x0, u)`.
    pub fn forward(&self, inputs: Inputs, x0: &[f64], steps: usize) -> Result<Trace, RnnError> {
        if steps == 0 {
            return Err(RnnError::InvalidConfig("need at least one step".into()));
        }
        let u = self.input_matrix(inputs, steps)?;
        let history = self.run(&u, x0, steps)?;
        let n = self.template.n();
        let mut columns = Vec::with_capacity(n);
        for i in 0..n {
            let values: Vec<f64> = (0..=steps).map(|k| history[k * n + i]).collect();
            columns.push((
                self.template.variables()[i].clone(),
                Trajectory::new(0.0, self.tau, values)?,
            ));
        }
        Ok(Trace::new(columns.into_iter().collect())?)
    }
}

/// Largest admissible Euler step for a per-step error factor `psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepBound {
    Bounded(f64),
    /// Every diagonal entry is zero: the error bound imposes no step limit.
    Unbounded,
}

impl StepBound {
    pub fn bound(self) -> Option<f64> {
        match self {
            StepBound::Bounded(t) => Some(t),
            StepBound::Unbounded => None,
        }
    }

    pub fn admits(self, tau: f64) -> bool {
        match self {
            StepBound::Bounded(t) => tau <= t,
            StepBound::Unbounded => true,
        }
    }
}

/// Maximum step width keeping the per-step Euler error factor below `psi`:
/// `min_i sqrt(2 psi) / |a_ii|` over non-zero diagonal entries.
/// Zero entries impose no bound; if all are zero the result is
/// [`StepBound::Unbounded`].
pub fn admissible_step(diagonal: &[f64], psi: f64) -> Result<StepBound, RnnError> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(RnnError::InvalidConfig(format!(
            "psi must lie in (0, 1), got {psi}"
        )));
    }
    if diagonal.is_empty() {
        return Err(RnnError::InvalidConfig("empty diagonal".into()));
    }
    let root = (2.0 * psi).sqrt();
    let mut best: Option<f64> = None;
    for &d in diagonal {
        if d != 0.0 {
            let t = root / d.abs();
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    Ok(best.map_or(StepBound::Unbounded, StepBound::Bounded))
}

/// [`admissible_step`] for a coefficient estimate bound to a template.
pub fn admissible_step_for(
    template: &ModelTemplate,
    omega: &CoefficientVector,
    psi: f64,
) -> Result<StepBound, RnnError> {
    let (a, _) = template.assemble(omega)?;
    let diag: Vec<f64> = (0..template.n()).map(|i| a[i][i]).collect();
    admissible_step(&diag, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternEntry;

    fn scalar_template(a: PatternEntry, b: PatternEntry) -> ModelTemplate {
        ModelTemplate::new(
            vec!["x".into()],
            vec!["u".into()],
            vec![vec![a]],
            vec![b],
            vec![true],
        )
        .unwrap()
    }

    #[test]
    fn smallest_legal_network() {
        let t = scalar_template(PatternEntry::FreeAny, PatternEntry::Zero);
        let net = DynamicsRnn::induce(&t, 0.1).unwrap();
        assert_eq!(net.cells().len(), 1);
        assert_eq!(net.cells()[0].connections, vec![(0, 0)]);
        assert!(net.cells()[0].input_tap.is_none());
        assert_eq!(net.edge_count(), (1, 0));
        assert_eq!(net.weight_count(), 1);
    }

    #[test]
    fn random_pattern_edge_count_matches_nonzeros() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // 4x4 pattern with exactly 7 free A slots (diagonal always free so no
        // dead rows) and 2 free B slots.
        let n = 4;
        let mut a = vec![vec![PatternEntry::Zero; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = PatternEntry::FreeAny;
        }
        let mut extra = 0;
        while extra < 3 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a[i][j] == PatternEntry::Zero {
                a[i][j] = PatternEntry::FreeAny;
                extra += 1;
            }
        }
        let b = vec![
            PatternEntry::FreeAny,
            PatternEntry::Zero,
            PatternEntry::FreeAny,
            PatternEntry::Zero,
        ];
        let t = ModelTemplate::new(
            (0..n).map(|i| format!("x{i}")).collect(),
            (0..n).map(|i| format!("u{i}")).collect(),
            a,
            b,
            vec![true; n],
        )
        .unwrap();
        let net = DynamicsRnn::induce(&t, 0.1).unwrap();
        assert_eq!(net.edge_count(), (7, 2));
        assert_eq!(net.weight_count(), 9);
    }

    #[test]
    fn discrete_pure_integrator() {
        let t = scalar_template(PatternEntry::FreeAny, PatternEntry::FreePositive);
        let mut net = DynamicsRnn::induce(&t, 0.5).unwrap();
        net.set_weights(&[0.0, 1.0]).unwrap();
        let mut u = InputSchedule::new();
        u.add_constant("u", 1.0).unwrap();
        let trace = net.forward(Inputs::Schedule(&u), &[0.0], 4).unwrap();
        assert_eq!(trace.signal("x").unwrap().values(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn euler_decay_matches_closed_form_product() {
        let t = scalar_template(PatternEntry::FreeNegative, PatternEntry::Zero);
        let mut net = DynamicsRnn::induce(&t, 0.01).unwrap();
        net.set_weights(&[-0.1]).unwrap();
        let trace = net.forward(Inputs::None, &[1.0], 1000).unwrap();
        let x = trace.signal("x").unwrap().values();
        let expect = 0.999f64.powi(1000);
        assert!((x[1000] - expect).abs() < 1e-12);
        // within psi = 1e-3 relative of the analytic solution
        let analytic = (-1.0f64).exp();
        assert!(((x[1000] - analytic) / analytic).abs() < 1e-3);
    }

    #[test]
    fn forward_matches_closed_form_discrete_solution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = rng.gen_range(1..=3);
            let t = ModelTemplate::new(
                (0..n).map(|i| format!("x{i}")).collect(),
                (0..n).map(|i| format!("u{i}")).collect(),
                vec![vec![PatternEntry::FreeAny; n]; n],
                vec![PatternEntry::FreeAny; n],
                vec![true; n],
            )
            .unwrap();
            let tau = 0.05;
            let mut net = DynamicsRnn::induce(&t, tau).unwrap();
            let weights: Vec<f64> = (0..net.weight_count()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            net.set_weights(&weights).unwrap();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut u = InputSchedule::new();
            for i in 0..n {
                u.add_constant(&format!("u{i}"), rng.gen_range(-1.0..1.0)).unwrap();
            }
            let steps = 20;
            let trace = net.forward(Inputs::Schedule(&u), &x0, steps).unwrap();

            // closed form x[k] = (I + tau A)^k x0 + sum tau (I + tau A)^(k-1-m) B u[m]
            let (a, b) = net.dense();
            let m = |v: &[f64]| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        v[i] + tau * (0..n).map(|j| a[i][j] * v[j]).sum::<f64>()
                    })
                    .collect()
            };
            let mut x = x0.clone();
            for k in 0..=steps {
                for i in 0..n {
                    let got = trace.signal(&format!("x{i}")).unwrap().values()[k];
                    assert!(
                        (got - x[i]).abs() < 1e-10,
                        "k={k} i={i}: {got} vs {}",
                        x[i]
                    );
                }
                if k < steps {
                    let mut next = m(&x);
                    for i in 0..n {
                        next[i] += tau * b[i] * u.sample(&format!("u{i}"), k, tau);
                    }
                    x = next;
                }
            }
        }
    }

    #[test]
    fn step_bound_examples() {
        // sqrt(2 * 5e-5) = 0.01; min(0.01/0.1, 0.01/0.028) = 0.1
        let b = admissible_step(&[0.1, 0.028], 5e-5).unwrap();
        assert!(matches!(b, StepBound::Bounded(t) if (t - 0.1).abs() < 1e-12));

        let b = admissible_step(&[-1.0], 0.5).unwrap();
        assert!(matches!(b, StepBound::Bounded(t) if (t - 1.0).abs() < 1e-12));

        let b = admissible_step(&[0.0, 0.0], 0.1).unwrap();
        assert_eq!(b, StepBound::Unbounded);

        assert!(admissible_step(&[1.0], 0.0).is_err());
        assert!(admissible_step(&[1.0], 1.0).is_err());
    }

    #[test]
    fn step_bound_shrinks_monotonically_with_psi() {
        let mut last = f64::INFINITY;
        for &psi in &[0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6] {
            let b = admissible_step(&[0.3, -2.0], psi).unwrap().bound().unwrap();
            assert!(b < last, "bound must shrink: {b} !< {last}");
            last = b;
        }
    }

    #[test]
    fn forward_divergence_reports_step() {
        let t = scalar_template(PatternEntry::FreeAny, PatternEntry::Zero);
        let mut net = DynamicsRnn::induce(&t, 1.0).unwrap();
        net.set_weights(&[1e150]).unwrap();
        let err = net.forward(Inputs::None, &[1e200], 5).unwrap_err();
        assert!(matches!(err, RnnError::DivergedForwardPass { .. }));
    }
}
