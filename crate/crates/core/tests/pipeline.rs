//! Cross-module integration checks: the frozen oracle regression fixture,
//! the Euler-vs-oracle distance bound at a validated step, the
//! exact-reference detection path, and the trivial surrogate-validation
//! cases.

use u2detect_core::bergman::{
    bergman_template, generate_scenario, BergmanParams, FaultScenario, ScenarioConfig,
};
use u2detect_core::conformance::{
    calibrate, detect, validate_surrogate, SurrogateSample,
};
use u2detect_core::model::{integrate_reference, trace_distance, InputSchedule, Trace};
use u2detect_core::rnn::{
    admissible_step_for, loss, DynamicsRnn, Inputs, TrainingConfig,
};
use u2detect_core::stl::{safety_formula, Direction, Feature, StlFormula};

fn reference_bolus_meal_inputs() -> InputSchedule {
    let mut u = InputSchedule::new();
    u.add_impulse("u1", 0.0, 7.5).unwrap();
    u.add_impulse("u2", 0.0, 20.0).unwrap();
    u
}

/// Glucose-deviation samples of the reference scenario (7.5 U, 20 g) at
/// tau = 0.01 min, frozen from the oracle's first run. Guards against any
/// silent change in integrator, input sampling or coefficient mapping.
const FROZEN_DELTA_G: [(usize, f64); 6] = [
    (100, -0.2431397295745331),
    (1000, -0.18902262114154292),
    (6000, -0.04662427077124644),
    (12000, -0.008689618553925223),
    (24000, -0.0003018361864625532),
    (42000, -1.954011504563047e-6),
];

#[test]
fn oracle_reference_scenario_regression_fixture() {
    let template = bergman_template();
    let omega = BergmanParams::reference().to_coefficients(&template).unwrap();
    let u = reference_bolus_meal_inputs();
    let trace = integrate_reference(&template, &omega, &u, &[0.0; 3], 0.01, 42_000).unwrap();
    let g = trace.signal("G").unwrap().values();
    for (k, expect) in FROZEN_DELTA_G {
        let got = g[k];
        assert!(
            (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "deltaG[{k}] = {got}, frozen {expect}"
        );
    }
    // absolute CGM (baseline 120) stays above 70 over the whole horizon
    let min_g = g.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    assert!(120.0 + min_g > 70.0, "min CGM = {}", 120.0 + min_g);
}

#[test]
fn forward_pass_tracks_oracle_within_psi_at_validated_step() {
    let psi = 0.01;
    let template = bergman_template();
    let omega = BergmanParams::reference().to_coefficients(&template).unwrap();
    let tau = admissible_step_for(&template, &omega, psi)
        .unwrap()
        .bound()
        .unwrap();
    let steps = (60.0 / tau).ceil() as usize;
    let u = reference_bolus_meal_inputs();
    let oracle = integrate_reference(&template, &omega, &u, &[0.0; 3], tau, steps).unwrap();
    let mut net = DynamicsRnn::induce(&template, tau).unwrap();
    net.set_coefficients(&omega).unwrap();
    let euler = net.forward(Inputs::Schedule(&u), &[0.0; 3], steps).unwrap();

    // rmse against the oracle stays below psi times the signal's rms
    let eg = euler.restrict(&["G"]).unwrap();
    let og = oracle.restrict(&["G"]).unwrap();
    let d = trace_distance(&eg, &og).unwrap();
    let g = og.signal("G").unwrap().values();
    let rms = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
    assert!(d <= psi * rms, "rmse {d:.3e} vs psi * rms = {:.3e}", psi * rms);

    // and the peak-normalized replication loss stays below psi^2
    let mut columns: Vec<(String, Vec<f64>)> =
        vec![("G".to_string(), og.signal("G").unwrap().values().to_vec())];
    for name in ["u1", "u2"] {
        columns.push((
            name.to_string(),
            (0..=steps).map(|k| u.sample(name, k, tau)).collect(),
        ));
    }
    let target = Trace::from_columns(0.0, tau, columns).unwrap();
    let l = loss(&net, &target).unwrap();
    assert!(l <= psi * psi, "loss {l:.3e} vs psi^2 = {:.1e}", psi * psi);
}

#[test]
fn detection_of_exact_reference_coefficients_plumbs_the_score_floor() {
    // a trace generated by the forward pass itself at the reference
    // coefficients mines back exactly (zero-loss early exit), so the
    // verdict's robustness is exactly -threshold
    let template = bergman_template();
    let omega_ref = BergmanParams::reference().to_coefficients(&template).unwrap();
    let tau = 0.005;
    let steps = 6000;
    let u = reference_bolus_meal_inputs();
    let mut net = DynamicsRnn::induce(&template, tau).unwrap();
    net.set_coefficients(&omega_ref).unwrap();
    let states = net.forward(Inputs::Schedule(&u), &[0.0; 3], steps).unwrap();
    let mut columns: Vec<(String, Vec<f64>)> = vec![(
        "G".to_string(),
        states.signal("G").unwrap().values().to_vec(),
    )];
    for name in ["u1", "u2"] {
        columns.push((
            name.to_string(),
            (0..=steps).map(|k| u.sample(name, k, tau)).collect(),
        ));
    }
    let trace = Trace::from_columns(0.0, tau, columns).unwrap();

    let config = TrainingConfig {
        initial_omega: Some(omega_ref.clone()),
        ..Default::default()
    };
    // calibration from synthetic residues centered on a known rho_m
    let cal = u2detect_core::conformance::Calibration::from_residues(
        omega_ref.clone(),
        -0.004,
        vec![-0.001, 0.0005, 0.002, -0.0015],
        0.05,
        0.01,
    )
    .unwrap();
    let verdict = detect(&trace, &cal, &template, &config, None).unwrap();
    assert_eq!(verdict.robustness, -0.01);
    assert_eq!(verdict.residue, -0.01 - cal.rho_m);
    assert!(!verdict.low_confidence);
    assert_eq!(verdict.flagged, !cal.contains(verdict.residue));
}

#[test]
fn calibration_pipeline_examples_on_synthetic_scenarios() {
    // short-horizon smoke version of the full pipeline: calibrate on four
    // clean scenarios, then a clean trace stays unflagged while a heavy
    // blockage is flagged
    let template = bergman_template();
    let omega_ref = BergmanParams::reference().to_coefficients(&template).unwrap();
    let config = ScenarioConfig {
        horizon_min: 120.0,
        tau_min: 0.005,
        ..Default::default()
    };
    let tc = TrainingConfig {
        initial_omega: Some(omega_ref.clone()),
        max_epochs: 1500,
        patience: 300,
        ..Default::default()
    };
    let mine = |bolus: f64, meal: f64| {
        let pair = generate_scenario(bolus, meal, &FaultScenario::none(), &config).unwrap();
        let deltas = pair.logged.observables_to_deltas(&template);
        u2detect_core::rnn::mine_coefficients(&template, &deltas, &tc)
            .unwrap()
            .omega
    };
    let train = vec![mine(15.0, 17.0), mine(20.0, 20.0)];
    let test = vec![mine(10.0, 12.0), mine(12.0, 14.0)];
    let cal = calibrate(&train, &test, &omega_ref, 0.05).unwrap();

    let clean = generate_scenario(12.0, 17.0, &FaultScenario::none(), &config).unwrap();
    let v_clean = detect(&clean.logged, &cal, &template, &tc, Some(&safety_formula())).unwrap();

    let fault = FaultScenario::blockage(0.6, 50.0);
    let blocked = generate_scenario(7.5, 20.0, &fault, &config).unwrap();
    let v_fault = detect(&blocked.logged, &cal, &template, &tc, Some(&safety_formula())).unwrap();

    assert!(v_fault.flagged, "blockage residue {}", v_fault.residue);
    assert!(v_fault.safety_robustness.unwrap() > 0.0);
    assert!(
        v_fault.residue > v_clean.residue.abs() * 10.0,
        "fault residue {} should dominate clean residue {}",
        v_fault.residue,
        v_clean.residue
    );
}

#[test]
fn surrogate_validation_vacuous_and_exact_cases() {
    // 30 identical self-generated samples; mining starts at the truth
    let template = bergman_template();
    let omega_ref = BergmanParams::reference().to_coefficients(&template).unwrap();
    let tau = 0.005;
    let steps = 400;
    let u = reference_bolus_meal_inputs();
    let mut net = DynamicsRnn::induce(&template, tau).unwrap();
    net.set_coefficients(&omega_ref).unwrap();
    let states = net.forward(Inputs::Schedule(&u), &[0.0; 3], steps).unwrap();
    let mut columns: Vec<(String, Vec<f64>)> = vec![(
        "G".to_string(),
        states.signal("G").unwrap().values().to_vec(),
    )];
    for name in ["u1", "u2"] {
        columns.push((
            name.to_string(),
            (0..=steps).map(|k| u.sample(name, k, tau)).collect(),
        ));
    }
    let trace = Trace::from_columns(0.0, tau, columns).unwrap();
    let samples: Vec<SurrogateSample> = (0..30)
        .map(|i| SurrogateSample {
            label: format!("s{i}"),
            trace: trace.clone(),
            true_omega: omega_ref.clone(),
        })
        .collect();
    let config = TrainingConfig {
        initial_omega: Some(omega_ref.clone()),
        max_epochs: 50,
        ..Default::default()
    };
    let phi = StlFormula::pred(
        Feature::MaxRelDeviation {
            reference: omega_ref.clone(),
        },
        Direction::AtMost,
        0.01,
    );

    // delta = +inf: vacuously probability 1
    let vacuous = validate_surrogate(&samples, &template, &config, &phi, f64::INFINITY).unwrap();
    assert_eq!(vacuous.probability, 1.0);

    // delta = 0 with exact recovery: still probability 1
    let exact = validate_surrogate(&samples, &template, &config, &phi, 0.0).unwrap();
    assert_eq!(exact.probability, 1.0, "exceedances: {}", exact.exceedances);

    // fewer than 30 samples is a contract violation
    assert!(validate_surrogate(&samples[..10], &template, &config, &phi, 0.0).is_err());
}
