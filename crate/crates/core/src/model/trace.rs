//! Trajectory and trace containers plus piecewise-constant input schedules.

use std::collections::BTreeMap;

use super::{ModelError, ModelTemplate};

/// A uniformly sampled scalar signal: value at step `k` corresponds to time
/// `t0 + k * tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    tau: f64,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, tau: f64, values: Vec<f64>) -> Result<Self, ModelError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(ModelError::InvalidTrajectory(format!(
                "sampling period must be positive and finite, got {tau}"
            )));
        }
        if values.len() < 2 {
            return Err(ModelError::InvalidTrajectory(format!(
                "need at least 2 samples, got {}",
                values.len()
            )));
        }
        if !t0.is_finite() {
            return Err(ModelError::InvalidTrajectory("t0 is not finite".into()));
        }
        Ok(Trajectory { t0, tau, values })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor guarantees >= 2 samples
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.tau
    }
}

/// Uniformly sampled multi-signal time series. All member trajectories share
/// `t0`, `tau` and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    signals: BTreeMap<String, Trajectory>,
}

impl Trace {
    pub fn new(signals: BTreeMap<String, Trajectory>) -> Result<Self, ModelError> {
        let mut iter = signals.values();
        let first = iter
            .next()
            .ok_or_else(|| ModelError::InvalidTrace("trace has no signals".into()))?;
        for t in iter {
            if t.tau() != first.tau() || t.t0() != first.t0() || t.len() != first.len() {
                return Err(ModelError::InvalidTrace(
                    "all signals must share t0, tau and length".into(),
                ));
            }
        }
        Ok(Trace { signals })
    }

    pub fn from_columns<S: Into<String>>(
        t0: f64,
        tau: f64,
        columns: Vec<(S, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        let mut signals = BTreeMap::new();
        for (name, values) in columns {
            let name = name.into();
            let traj = Trajectory::new(t0, tau, values)?;
            if signals.insert(name.clone(), traj).is_some() {
                return Err(ModelError::InvalidTrace(format!("duplicate signal `{name}`")));
            }
        }
        Trace::new(signals)
    }

    pub fn tau(&self) -> f64 {
        self.signals.values().next().expect("non-empty").tau()
    }

    pub fn t0(&self) -> f64 {
        self.signals.values().next().expect("non-empty").t0()
    }

    /// Number of samples shared by every signal.
    pub fn len(&self) -> usize {
        self.signals.values().next().expect("non-empty").len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.signals.keys().map(|s| s.as_str())
    }

    pub fn signal(&self, name: &str) -> Option<&Trajectory> {
        self.signals.get(name)
    }

    pub fn signals(&self) -> &BTreeMap<String, Trajectory> {
        &self.signals
    }

    pub fn has_signal(&self, name: &str) -> bool {
        self.signals.contains_key(name)
    }

    /// Keep only the named signals.
    pub fn restrict(&self, names: &[&str]) -> Result<Trace, ModelError> {
        let mut signals = BTreeMap::new();
        for &name in names {
            let traj = self
                .signals
                .get(name)
                .ok_or_else(|| ModelError::InvalidTrace(format!("no signal `{name}`")))?;
            signals.insert(name.to_string(), traj.clone());
        }
        Trace::new(signals)
    }

    /// Check the trace carries one signal per observable variable and per
    /// active input channel of `template`.
    pub fn check_covers(&self, template: &ModelTemplate) -> Result<(), ModelError> {
        for &i in &template.observable_indices() {
            let name = &template.variables()[i];
            if !self.has_signal(name) {
                return Err(ModelError::InvalidTrace(format!(
                    "missing observable signal `{name}`"
                )));
            }
        }
        for &i in &template.active_input_indices() {
            let name = &template.inputs()[i];
            if !self.has_signal(name) {
                return Err(ModelError::InvalidTrace(format!(
                    "missing input signal `{name}`"
                )));
            }
        }
        Ok(())
    }

    /// Re-express every observable variable of `template` as its deviation
    /// from the trace's first sample, leaving input channels untouched.
    /// Already-centered signals (first sample 0) pass through unchanged.
    pub fn observables_to_deltas(&self, template: &ModelTemplate) -> Trace {
        let observable: std::collections::BTreeSet<&str> = template
            .observable_indices()
            .into_iter()
            .map(|i| template.variables()[i].as_str())
            .collect();
        let signals = self
            .signals
            .iter()
            .map(|(name, traj)| {
                let traj = if observable.contains(name.as_str()) {
                    let base = traj.values()[0];
                    Trajectory::new(
                        traj.t0(),
                        traj.tau(),
                        traj.values().iter().map(|v| v - base).collect(),
                    )
                    .expect("shape preserved")
                } else {
                    traj.clone()
                };
                (name.clone(), traj)
            })
            .collect();
        Trace { signals }
    }

    /// Same signal names, sampling and length as `other`.
    pub fn same_shape(&self, other: &Trace) -> bool {
        self.len() == other.len()
            && relative_eq(self.tau(), other.tau())
            && relative_eq(self.t0(), other.t0())
            && self.names().eq(other.names())
    }
}

fn relative_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Channel {
    /// (start time, value) breakpoints, strictly increasing in time; the
    /// channel holds each value until the next breakpoint (0 before the
    /// first).
    steps: Vec<(f64, f64)>,
    /// (time, area) impulse events, realized as a one-sample pulse of
    /// height `area / tau` at the sample containing the event time.
    impulses: Vec<(f64, f64)>,
}

/// Piecewise-constant external inputs `U(t)`, one channel per input name,
/// with impulse-style events (e.g. an insulin bolus) carried as
/// area-preserving single-sample pulses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputSchedule {
    channels: BTreeMap<String, Channel>,
}

impl InputSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hold `value` on `channel` from time `t` onward.
    pub fn add_step(&mut self, channel: &str, t: f64, value: f64) -> Result<(), ModelError> {
        if !t.is_finite() || t < 0.0 || !value.is_finite() {
            return Err(ModelError::InvalidSchedule(format!(
                "step ({t}, {value}) on `{channel}` is not finite/non-negative"
            )));
        }
        let ch = self.channels.entry(channel.to_string()).or_default();
        if let Some(&(last, _)) = ch.steps.last() {
            if t <= last {
                return Err(ModelError::InvalidSchedule(format!(
                    "breakpoints on `{channel}` must be strictly increasing ({t} after {last})"
                )));
            }
        }
        ch.steps.push((t, value));
        Ok(())
    }

    /// Constant value over the whole horizon.
    pub fn add_constant(&mut self, channel: &str, value: f64) -> Result<(), ModelError> {
        self.add_step(channel, 0.0, value)
    }

    /// Deliver `area` (dose) on `channel` as a single-sample pulse at the
    /// sample containing `t`.
    pub fn add_impulse(&mut self, channel: &str, t: f64, area: f64) -> Result<(), ModelError> {
        if !t.is_finite() || t < 0.0 || !area.is_finite() {
            return Err(ModelError::InvalidSchedule(format!(
                "impulse ({t}, {area}) on `{channel}` is not finite/non-negative"
            )));
        }
        self.channels
            .entry(channel.to_string())
            .or_default()
            .impulses
            .push((t, area));
        Ok(())
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(|s| s.as_str())
    }

    /// Piecewise-constant value at time `t` (impulses excluded).
    pub fn step_value(&self, channel: &str, t: f64) -> f64 {
        let Some(ch) = self.channels.get(channel) else {
            return 0.0;
        };
        let mut value = 0.0;
        for &(start, v) in &ch.steps {
            if start <= t {
                value = v;
            } else {
                break;
            }
        }
        value
    }

    /// Value seen by sample `k` of a `tau`-sampled integrator: the step
    /// value at `k * tau` plus `area / tau` for every impulse assigned to
    /// this sample. Each impulse lands on exactly one sample (the nearest
    /// one), so areas are never split or double-counted by floating-point
    /// boundary effects.
    pub fn sample(&self, channel: &str, k: usize, tau: f64) -> f64 {
        let t = k as f64 * tau;
        let mut value = self.step_value(channel, t);
        if let Some(ch) = self.channels.get(channel) {
            for &(ti, area) in &ch.impulses {
                if (ti / tau).round() as usize == k {
                    value += area / tau;
                }
            }
        }
        value
    }

    /// Total area delivered on `channel` over `steps` samples of width
    /// `tau` (piecewise-constant part integrated exactly on the grid).
    pub fn delivered_area(&self, channel: &str, steps: usize, tau: f64) -> f64 {
        (0..steps).map(|k| self.sample(channel, k, tau) * tau).sum()
    }
}
