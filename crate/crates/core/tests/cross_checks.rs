//! Cross-module checks: analytic limits against long simulations, stability
//! verdicts against divergence, and delay-free runs against the matrix
//! exponential.

use delayfb_core::analysis::{
    baseline_controller, closed_form_d1_error, closed_form_d2_ramp_error, closed_form_ramp_tracking_error,
    final_error, inputs_for, predict, Category, Channel, FinalValue,
};
use delayfb_core::case_study as cs;
use delayfb_core::simulator::{simulate, simulate_from, steady_state_error, Inputs, SimOptions, SteadyState};
use delayfb_core::{build_closed_loop, rightmost_roots, DelayedFeedbackController, Signal, SpectrumOptions};
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn baseline() -> DelayedFeedbackController {
    baseline_controller(&cs::plant(), &cs::dominant_roots()).unwrap()
}

fn settle(ctrl: &DelayedFeedbackController, category: Category, signal: Signal) -> SteadyState {
    let cl = build_closed_loop(&cs::plant(), ctrl).unwrap();
    let traj = simulate(&cl, &inputs_for(&cl, category, signal), &SimOptions::for_loop(&cl, cs::HORIZON)).unwrap();
    steady_state_error(&traj)
}

fn assert_matches(sim: &SteadyState, predicted: &DVector<f64>) {
    let v = sim.value().expect("settled");
    let rel = (v - predicted).norm() / predicted.norm();
    assert!(rel <= 1e-3, "simulated {v} vs predicted {predicted} (rel {rel:.2e})");
}

#[test]
fn finite_limits_match_long_simulations() {
    let plant = cs::plant();
    let ones = DVector::from_element(2, 1.0);
    let one = DVector::from_element(1, 1.0);
    for ctrl in [cs::design_one(), baseline()] {
        let d2 = Signal::ramp(2, 10.0, 1.0, &[1.0, 1.0]).unwrap();
        assert_matches(
            &settle(&ctrl, Category::D2, d2),
            &closed_form_d2_ramp_error(&plant, &ctrl, &ones).unwrap(),
        );
        let r = Signal::ramp(1, 0.0, 1.0, &[1.0]).unwrap();
        assert_matches(
            &settle(&ctrl, Category::Tracking, r),
            &closed_form_ramp_tracking_error(&plant, &ctrl, &one).unwrap(),
        );
        // V / s^{p+2}
        let k = ctrl.p() + 2;
        let fact: f64 = (1..k).map(|i| i as f64).product();
        let mut coeffs = vec![0.0; k];
        coeffs[k - 1] = 1.0 / fact;
        let d1 = Signal::new(
            2,
            vec![delayfb_core::SignalPiece {
                t_start: 10.0,
                coeffs,
                direction: vec![1.0, 1.0],
            }],
        )
        .unwrap();
        assert_matches(
            &settle(&ctrl, Category::D1, d1),
            &closed_form_d1_error(&plant, &ctrl, &ones).unwrap(),
        );
    }
}

#[test]
fn step_reference_is_tracked_by_every_design() {
    for ctrl in [cs::design_one(), cs::design_two(), baseline()] {
        let sim = settle(&ctrl, Category::Tracking, cs::reference_step());
        assert!(sim.is_zero_within(1e-3), "{sim:?}");
    }
}

#[test]
fn small_detuning_flips_ramp_verdicts() {
    let plant = cs::plant();
    let ctrl = cs::design_two_with(0.44, -0.99 / 0.44);
    let report = predict(&plant, &ctrl).unwrap();
    assert!(!report.d2_ramp_rejected && !report.ramp_reference_tracked);
    assert!((report.condition_det - 0.01).abs() < 1e-12);
    let cl = build_closed_loop(&plant, &ctrl).unwrap();
    // the offsets scale with 1 + K2 τ_q = 0.01, so a slope of 10 keeps them above
    // the 1e-3 rejection threshold
    for (category, channel, signal) in [
        (Category::D2, Channel::PlantD2, Signal::ramp(2, 10.0, 10.0, &[1.0, 1.0]).unwrap()),
        (Category::Tracking, Channel::Reference, Signal::ramp(1, 0.0, 10.0, &[1.0]).unwrap()),
    ] {
        let predicted = final_error(&cl, channel, &signal).unwrap();
        let FinalValue::Finite(v) = predicted else {
            panic!("expected a finite offset, got {predicted:?}");
        };
        let sim = settle(&ctrl, category, signal);
        assert!(!sim.is_zero_within(1e-3));
        assert_matches(&sim, &v);
    }
}

#[test]
fn open_loop_matches_matrix_exponential() {
    let cl = build_closed_loop(&cs::plant(), &cs::zero_gain()).unwrap();
    let g0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    // e^{1.5 t} passes the default bound before t = 10
    let opts = SimOptions {
        divergence_bound: 1e12,
        ..SimOptions::for_loop(&cl, 10.0)
    };
    let traj = simulate_from(&cl, &g0, &Inputs::zero(&cl), &opts).unwrap();
    assert!(!traj.diverged);
    let exact = (cl.a0() * 10.0).exp() * &g0;
    let last = traj.len() - 1;
    let x = &traj.x[last];
    let rel = (x - exact.rows(0, 2)).norm() / exact.rows(0, 2).norm();
    assert!(rel < 0.01, "relative error {rel}");
}

#[test]
fn divergence_agrees_with_abscissa_sign() {
    let plant = cs::plant();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut unstable = 0;
    while checked < 20 {
        // a box around the published gains, wide enough to contain unstable loops
        let k = dmatrix![rng.random_range(0.0..6.0), rng.random_range(-1.0..3.0)];
        let k1 = dmatrix![rng.random_range(-6.0..1.0)];
        let tau = rng.random_range(0.1..1.0);
        let p = rng.random_range(0..=2usize);
        let tau_q: f64 = if rng.random_bool(0.5) { rng.random_range(0.2..1.0) } else { 0.0 };
        let k2 = if tau_q > 0.0 { dmatrix![-1.0 / tau_q] } else { dmatrix![0.0] };
        let ctrl = DelayedFeedbackController::new(k, k1, k2, tau, tau_q, p).unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        let abscissa = rightmost_roots(&cl, 10, &SpectrumOptions::default()).unwrap().abscissa;
        if abscissa.abs() < 0.05 {
            continue;
        }
        // long enough for growth at rate 0.05 to pass the divergence bound
        let horizon = (1e8f64).ln() / 0.05;
        let opts = SimOptions::for_loop(&cl, horizon);
        let g0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let traj = simulate_from(&cl, &g0, &Inputs::zero(&cl), &opts).unwrap();
        assert_eq!(traj.diverged, abscissa > 0.0, "abscissa {abscissa} for {ctrl:?}");
        checked += 1;
        unstable += usize::from(abscissa > 0.0);
    }
    assert!(unstable > 0 && unstable < 20, "{unstable} of 20 unstable");
}

#[test]
fn delay_free_roots_match_dense_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let plant = delayfb_core::Plant::new(
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(-3.0..3.0)),
            DMatrix::from_fn(2, 1, |_, _| rng.random_range(-2.0..2.0)),
            DMatrix::from_fn(1, 2, |_, _| rng.random_range(-2.0..2.0)),
        )
        .unwrap();
        let ctrl = DelayedFeedbackController::conventional(
            DMatrix::from_fn(1, 2, |_, _| rng.random_range(-3.0..3.0)),
            dmatrix![rng.random_range(-3.0..3.0)],
        )
        .unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        let roots = rightmost_roots(&cl, 3, &SpectrumOptions::default()).unwrap();
        let dense: Vec<_> = cl.a0().complex_eigenvalues().iter().copied().collect();
        assert!(delayfb_core::linalg::max_matched_distance(&roots.values(), &dense) < 1e-9);
    }
}
