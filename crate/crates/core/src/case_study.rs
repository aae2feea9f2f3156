//! Built-in case-study data: the unstable two-state plant, the two published
//! delayed-feedback designs, the baseline pole set and the stand-in
//! disturbance/reference signals used by the reproduction runs.

use nalgebra::{dmatrix, DMatrix};
use num_complex::Complex64;

use crate::model::{DelayedFeedbackController, Plant};
use crate::signal::Signal;

pub fn plant() -> Plant {
    Plant::new(
        dmatrix![3.0, -3.75; 1.0, -1.0],
        dmatrix![1.0; -1.5],
        dmatrix![-2.5, 2.0],
    )
    .expect("case-study plant is well formed")
}

/// `p = 1`, `τ_q = 0`: K = [1.2, 0.3319], K1 = -0.5523, τ = 0.41.
pub fn design_one() -> DelayedFeedbackController {
    DelayedFeedbackController::new(
        dmatrix![1.2, 0.3319],
        dmatrix![-0.5523],
        dmatrix![0.0],
        0.41,
        0.0,
        1,
    )
    .expect("design one is well formed")
}

/// `p = 1`, `τ_q = 0.44`, `K2 = -1/τ_q`: K = [3.097, 0.8184], K1 = -4.346, τ = 0.34.
pub fn design_two() -> DelayedFeedbackController {
    design_two_with(0.44, -1.0 / 0.44)
}

/// Design two with the integral-path delay and gain overridden.
pub fn design_two_with(tau_q: f64, k2: f64) -> DelayedFeedbackController {
    DelayedFeedbackController::new(
        dmatrix![3.097, 0.8184],
        dmatrix![-4.346],
        DMatrix::from_element(1, 1, k2),
        0.34,
        tau_q,
        1,
    )
    .expect("design two is well formed")
}

/// All gains zero, `p = 0`: the open augmented system.
pub fn zero_gain() -> DelayedFeedbackController {
    DelayedFeedbackController::conventional(dmatrix![0.0, 0.0], dmatrix![0.0])
        .expect("zero gain is well formed")
}

/// Dominant roots reported for design one; the baseline places its poles here.
pub fn dominant_roots() -> Vec<Complex64> {
    vec![
        Complex64::new(-1.36, 0.9646),
        Complex64::new(-1.36, -0.9646),
        Complex64::new(-2.6729, 0.0),
    ]
}

/// Stopping threshold on the spectral abscissa used by the tuning runs.
pub const ABSCISSA_THRESHOLD: f64 = -1.0;

/// Horizon for steady-state claims.
pub const HORIZON: f64 = 60.0;

const ALL_STATES: [f64; 2] = [1.0, 1.0];

/// Sensor disturbance: step 0.5 at t = 10 plus ramp slope 0.1 from t = 25.
pub fn d1_step_ramp() -> Signal {
    Signal::step(2, 10.0, 0.5, &ALL_STATES)
        .and_then(|s| s.plus(&Signal::ramp(2, 25.0, 0.1, &ALL_STATES)?))
        .expect("valid signal")
}

/// Sensor disturbance: `0.02 (t - 10)^2` from t = 10.
pub fn d1_parabola() -> Signal {
    Signal::parabola(2, 10.0, 0.02, &ALL_STATES).expect("valid signal")
}

/// Plant disturbance: step 0.5 at t = 15 plus ramp slope 0.05 from t = 30.
pub fn d2_step_ramp() -> Signal {
    Signal::step(2, 15.0, 0.5, &ALL_STATES)
        .and_then(|s| s.plus(&Signal::ramp(2, 30.0, 0.05, &ALL_STATES)?))
        .expect("valid signal")
}

/// Unit step reference at t = 0.
pub fn reference_step() -> Signal {
    Signal::step(1, 0.0, 1.0, &[1.0]).expect("valid signal")
}

/// Unit step at t = 0 plus ramp slope 0.1 from t = 35.
pub fn reference_step_ramp() -> Signal {
    reference_step()
        .plus(&Signal::ramp(1, 35.0, 0.1, &[1.0]).expect("valid signal"))
        .expect("valid signal")
}
