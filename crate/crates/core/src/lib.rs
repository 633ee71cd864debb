//! Detection of silent operational faults in autonomous control loops by
//! mining physical ODE coefficients from logged traces and checking them
//! against a conformally calibrated acceptance interval.
//!
//! The pipeline, end to end:
//!
//! 1. [`model`]: the plant formalism. An LTI ODE template with sign and
//!    sparsity constraints, coefficient vectors, trace containers, and a
//!    fourth-order reference integrator used as ground truth.
//! 2. [`rnn`]: a recurrent network induced from the template's sparsity
//!    whose forward pass is the forward-Euler discretization of the ODE and
//!    whose trainable weights *are* the physical coefficients; training by
//!    backpropagation through time mines coefficients from traces.
//! 3. [`stl`]: signal temporal logic robustness over traces and over mined
//!    coefficient sequences, including the coefficient-deviation score used
//!    for conformance.
//! 4. [`conformance`]: conformal calibration of robustness residues on
//!    held-out data and the detector that flags traces whose mined
//!    coefficients fall outside the calibrated interval.
//! 5. [`bergman`]: the insulin-pump case study. A linearized three-state
//!    glucose-insulin plant, scenario generation, and fault injection
//!    (cartridge blockage, unlogged correction boluses).

pub mod bergman;
pub mod conformance;
pub mod model;
pub mod rnn;
pub mod stl;
