//! Fixed-step time-domain simulation of the delayed closed loop.
//!
//! The stacked state `G = [x; q]` is advanced with classical RK4. Delayed
//! values are read from the stored trajectory through cubic Hermite
//! interpolation on the grid nodes (value and derivative); before `t = 0`
//! the history equals the initial state.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ClosedLoopDDE, DelayedFeedbackController};
use crate::signal::Signal;

/// Signals acting on the loop: reference `r`, sensor disturbance `d1`
/// (corrupts the measured state feeding the delayed difference), plant
/// disturbance `d2` (added to `x'`).
#[derive(Debug, Clone)]
pub struct Inputs {
    pub reference: Signal,
    pub d1: Signal,
    pub d2: Signal,
}

impl Inputs {
    pub fn zero(cl: &ClosedLoopDDE) -> Self {
        Self {
            reference: Signal::zero(cl.m()),
            d1: Signal::zero(cl.n()),
            d2: Signal::zero(cl.n()),
        }
    }

    pub fn new(reference: Signal, d1: Signal, d2: Signal) -> Self {
        Self { reference, d1, d2 }
    }

    fn check(&self, cl: &ClosedLoopDDE) -> Result<()> {
        let checks = [
            ("reference", self.reference.dim(), cl.m()),
            ("d1", self.d1.dim(), cl.n()),
            ("d2", self.d2.dim(), cl.n()),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::InvalidParameter {
                    name: name.into(),
                    reason: format!("signal dimension {got}, expected {want}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    /// Any state entry beyond this magnitude marks the run as diverged.
    pub divergence_bound: f64,
}

impl SimOptions {
    /// `min(τ, τ_q if active)/20`, capped at `0.01` s.
    pub fn default_step(cl: &ClosedLoopDDE) -> f64 {
        let delays = cl.delays();
        let smallest = delays.first().copied().unwrap_or(f64::INFINITY);
        (smallest / 20.0).min(1e-2)
    }

    pub fn for_loop(cl: &ClosedLoopDDE, horizon: f64) -> Self {
        Self {
            horizon,
            step: Self::default_step(cl),
            divergence_bound: 1e6,
        }
    }
}

/// Logged time response on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Tracking error `y - r`.
    pub e: Vec<DVector<f64>>,
    /// Set when the state left the divergence bound or became non-finite; the
    /// series stop at the last sample inside the bound.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// CSV with header `t,x1..xn,q1..qm,u1..ur,y1..ym,e1..em`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (n, m, r) = match (self.x.first(), self.q.first(), self.u.first()) {
            (Some(x), Some(q), Some(u)) => (x.len(), q.len(), u.len()),
            _ => (0, 0, 0),
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("q{i}")));
        header.extend((1..=r).map(|i| format!("u{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.extend((1..=m).map(|i| format!("e{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            for series in [&self.x[k], &self.q[k], &self.u[k], &self.y[k], &self.e[k]] {
                row.extend(series.iter().map(|v| v.to_string()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates `u(t) = -(K Σ_{i=0..p} w_i x_meas(t - iτ) + K1 q(t))`.
///
/// `measured[i]` is `x(t - iτ) + d1(t - iτ)`.
pub fn control_law(ctrl: &DelayedFeedbackController, measured: &[DVector<f64>], q: &DVector<f64>) -> DVector<f64> {
    let weights = ctrl.weights();
    assert_eq!(measured.len(), weights.len(), "need one measured sample per binomial weight");
    let mut diff = DVector::zeros(ctrl.k().ncols());
    for (w, xm) in weights.iter().zip(measured) {
        diff.axpy(*w as f64, xm, 1.0);
    }
    -(ctrl.k() * diff + ctrl.k1() * q)
}

/// Dense history of the stacked state for delayed lookups.
struct History {
    step: f64,
    initial: DVector<f64>,
    values: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
}

impl History {
    fn at(&self, t: f64) -> DVector<f64> {
        if t <= 0.0 {
            return self.initial.clone();
        }
        let pos = t / self.step;
        let k = (pos.floor() as usize).min(self.values.len().saturating_sub(2));
        let s = pos - k as f64;
        let (g0, g1) = (&self.values[k], &self.values[k + 1]);
        let (f0, f1) = (&self.slopes[k], &self.slopes[k + 1]);
        let h = self.step;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        g0 * h00 + f0 * (h10 * h) + g1 * h01 + f1 * (h11 * h)
    }
}

struct Rhs<'a> {
    cl: &'a ClosedLoopDDE,
    inputs: &'a Inputs,
    k2: DMatrix<f64>,
}

impl<'a> Rhs<'a> {
    fn new(cl: &'a ClosedLoopDDE, inputs: &'a Inputs) -> Self {
        Self {
            cl,
            inputs,
            k2: cl.controller().k2_active(),
        }
    }

    fn split(&self, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.cl.n();
        (g.rows(0, n).into_owned(), g.rows(n, self.cl.m()).into_owned())
    }

    /// Measured states `x(t - iτ) + d1(t - iτ)` for `i = 0..p`, with the
    /// current sample supplied directly (it is not yet in the history).
    fn measured(&self, t: f64, g_now: &DVector<f64>, hist: &History) -> Vec<DVector<f64>> {
        let ctrl = self.cl.controller();
        (0..=ctrl.p())
            .map(|i| {
                let td = t - i as f64 * ctrl.tau();
                let mut x = if i == 0 {
                    self.split(g_now).0
                } else {
                    self.split(&hist.at(td)).0
                };
                self.inputs.d1.add_value_into(td, &mut x);
                x
            })
            .collect()
    }

    fn control(&self, t: f64, g: &DVector<f64>, hist: &History) -> DVector<f64> {
        let (_, q) = self.split(g);
        control_law(self.cl.controller(), &self.measured(t, g, hist), &q)
    }

    fn eval(&self, t: f64, g: &DVector<f64>, hist: &History) -> DVector<f64> {
        let plant = self.cl.plant();
        let (x, q) = self.split(g);
        let u = self.control(t, g, hist);
        let mut dx = plant.a() * &x + plant.b() * u;
        self.inputs.d2.add_value_into(t, &mut dx);
        let mut dq = plant.c() * &x - self.inputs.reference.value(t);
        if self.cl.integral_delay_active() {
            let (_, q_del) = self.split(&hist.at(t - self.cl.tau_q()));
            dq -= &self.k2 * (q - q_del);
        }
        let mut out = DVector::zeros(g.len());
        out.rows_mut(0, x.len()).copy_from(&dx);
        out.rows_mut(x.len(), dq.len()).copy_from(&dq);
        out
    }
}

fn validate_options(cl: &ClosedLoopDDE, opts: &SimOptions) -> Result<usize> {
    if !(opts.step.is_finite() && opts.step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "step".into(),
            reason: format!("must be > 0, got {}", opts.step),
        });
    }
    if let Some(min_delay) = cl.delays().first() {
        if opts.step > min_delay / 10.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter {
                name: "step".into(),
                reason: format!("must be <= min delay / 10 = {}", min_delay / 10.0),
            });
        }
    }
    if !(opts.horizon.is_finite() && opts.horizon >= 10.0 * opts.step) {
        return Err(Error::InvalidParameter {
            name: "horizon".into(),
            reason: format!("must be >= 10 steps, got {}", opts.horizon),
        });
    }
    Ok((opts.horizon / opts.step).round() as usize)
}

/// Simulates from rest (`G(t) = 0` for `t <= 0`).
pub fn simulate(cl: &ClosedLoopDDE, inputs: &Inputs, opts: &SimOptions) -> Result<Trajectory> {
    simulate_from(cl, &DVector::zeros(cl.dim()), inputs, opts)
}

/// Simulates with the constant pre-history `G(t) = initial` for `t <= 0`.
pub fn simulate_from(
    cl: &ClosedLoopDDE,
    initial: &DVector<f64>,
    inputs: &Inputs,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if initial.len() != cl.dim() {
        return Err(Error::InvalidParameter {
            name: "initial_state".into(),
            reason: format!("length {}, expected {}", initial.len(), cl.dim()),
        });
    }
    inputs.check(cl)?;
    let steps = validate_options(cl, opts)?;
    let h = opts.step;
    let rhs = Rhs::new(cl, inputs);
    let plant = cl.plant();

    let mut hist = History {
        step: h,
        initial: initial.clone(),
        values: Vec::with_capacity(steps + 1),
        slopes: Vec::with_capacity(steps + 1),
    };
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        e: Vec::with_capacity(steps + 1),
        diverged: false,
    };

    let mut g = initial.clone();
    for k in 0..=steps {
        let t = k as f64 * h;
        let inside = g.iter().all(|v| v.is_finite() && v.abs() <= opts.divergence_bound);
        if !inside {
            traj.diverged = true;
            break;
        }
        let slope = rhs.eval(t, &g, &hist);
        let u = rhs.control(t, &g, &hist);
        let (x, q) = rhs.split(&g);
        let y = plant.c() * &x;
        let e = &y - inputs.reference.value(t);
        traj.times.push(t);
        traj.x.push(x);
        traj.q.push(q);
        traj.u.push(u);
        traj.y.push(y);
        traj.e.push(e);
        hist.values.push(g.clone());
        hist.slopes.push(slope.clone());
        if k == steps {
            break;
        }

        // Stage lookups reach back at least 9.5 steps, always inside the stored history.
        let k1 = slope;
        let k2 = rhs.eval(t + 0.5 * h, &(&g + &k1 * (0.5 * h)), &hist);
        let k3 = rhs.eval(t + 0.5 * h, &(&g + &k2 * (0.5 * h)), &hist);
        let k4 = rhs.eval(t + h, &(&g + &k3 * h), &hist);
        g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(traj)
}

/// Steady-state verdict on the tracking error.
#[derive(Debug, Clone, PartialEq)]
pub enum SteadyState {
    Settled(DVector<f64>),
    NotSettled,
}

impl SteadyState {
    pub fn value(&self) -> Option<&DVector<f64>> {
        match self {
            SteadyState::Settled(v) => Some(v),
            SteadyState::NotSettled => None,
        }
    }

    /// Settled with every component below `tol` in magnitude.
    pub fn is_zero_within(&self, tol: f64) -> bool {
        self.value().is_some_and(|v| v.amax() < tol)
    }
}

pub const SETTLING_WINDOW: f64 = 0.1;
pub const SETTLING_FLATNESS: f64 = 1e-4;

/// Mean error over the final 10% of the horizon, settled when every sample in
/// that window lies within `1e-4` of the mean.
pub fn steady_state_error(traj: &Trajectory) -> SteadyState {
    if traj.diverged || traj.is_empty() {
        return SteadyState::NotSettled;
    }
    let len = traj.len();
    let window = ((len as f64 * SETTLING_WINDOW).ceil() as usize).clamp(1, len);
    let tail = &traj.e[len - window..];
    if tail.iter().any(|e| e.iter().any(|v| !v.is_finite())) {
        return SteadyState::NotSettled;
    }
    let mut mean = DVector::zeros(tail[0].len());
    for e in tail {
        mean += e;
    }
    mean /= window as f64;
    let deviation = tail.iter().map(|e| (e - &mean).amax()).fold(0.0, f64::max);
    if deviation < SETTLING_FLATNESS {
        SteadyState::Settled(mean)
    } else {
        SteadyState::NotSettled
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::model::{build_closed_loop, Plant};
    use nalgebra::dmatrix;

    #[test]
    fn constant_history_gives_zero_difference_control() {
        let ctrl = case_study::design_two();
        let c = DVector::from_vec(vec![0.7, -2.0]);
        let u = control_law(&ctrl, &[c.clone(), c], &DVector::zeros(1));
        assert_eq!(u, DVector::zeros(1));
        let p3 = DelayedFeedbackController::new(dmatrix![1.0, 2.0], dmatrix![1.0], dmatrix![0.0], 0.2, 0.0, 3)
            .unwrap();
        let c = DVector::from_vec(vec![1.5, 4.0]);
        let u = control_law(&p3, &vec![c; 4], &DVector::zeros(1));
        assert_eq!(u, DVector::zeros(1));
    }

    #[test]
    fn conventional_law_is_plain_feedback() {
        let ctrl = DelayedFeedbackController::conventional(dmatrix![2.0, -1.0], dmatrix![0.5]).unwrap();
        let x = DVector::from_vec(vec![1.0, 3.0]);
        let q = DVector::from_vec(vec![2.0]);
        let u = control_law(&ctrl, &[x.clone()], &q);
        assert_eq!(u[0], -(2.0 * 1.0 - 3.0 + 0.5 * 2.0));
    }

    #[test]
    fn hand_evaluated_first_difference() {
        let ctrl = case_study::design_one();
        let u = control_law(
            &ctrl,
            &[DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2)],
            &DVector::zeros(1),
        );
        assert!((u[0] + 1.2).abs() < 1e-15);
    }

    #[test]
    fn rest_stays_at_rest() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_two()).unwrap();
        let traj = simulate(&cl, &Inputs::zero(&cl), &SimOptions::for_loop(&cl, 5.0)).unwrap();
        assert!(!traj.diverged);
        for k in 0..traj.len() {
            assert!(traj.x[k].iter().chain(traj.q[k].iter()).chain(traj.u[k].iter()).all(|v| *v == 0.0));
        }
        assert_eq!(steady_state_error(&traj), SteadyState::Settled(DVector::zeros(1)));
    }

    #[test]
    fn zero_initial_state_matches_simulate() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_one()).unwrap();
        let inputs = Inputs::new(case_study::reference_step(), Signal::zero(2), Signal::zero(2));
        let opts = SimOptions::for_loop(&cl, 5.0);
        let a = simulate(&cl, &inputs, &opts).unwrap();
        let b = simulate_from(&cl, &DVector::zeros(3), &inputs, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn open_loop_diverges_before_twenty_seconds() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::zero_gain()).unwrap();
        let opts = SimOptions {
            horizon: 20.0,
            step: 0.01,
            divergence_bound: 1e6,
        };
        let init = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let traj = simulate_from(&cl, &init, &Inputs::zero(&cl), &opts).unwrap();
        assert!(traj.diverged);
        assert!(traj.final_time() < 20.0);
        assert_eq!(steady_state_error(&traj), SteadyState::NotSettled);
    }

    #[test]
    fn output_and_error_recompute_from_state() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_one()).unwrap();
        let inputs = Inputs::new(case_study::reference_step(), case_study::d1_step_ramp(), Signal::zero(2));
        let traj = simulate(&cl, &inputs, &SimOptions::for_loop(&cl, 30.0)).unwrap();
        let c = cl.plant().c();
        for k in (0..traj.len()).step_by(97) {
            assert_eq!(traj.y[k], c * &traj.x[k]);
            assert_eq!(traj.e[k], &traj.y[k] - inputs.reference.value(traj.times[k]));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_two()).unwrap();
        let inputs = Inputs::new(case_study::reference_step(), case_study::d1_parabola(), case_study::d2_step_ramp());
        let opts = SimOptions::for_loop(&cl, 20.0);
        let a = simulate(&cl, &inputs, &opts).unwrap();
        let b = simulate(&cl, &inputs, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_coarse_step() {
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_one()).unwrap();
        let opts = SimOptions {
            horizon: 10.0,
            step: 0.1,
            divergence_bound: 1e6,
        };
        assert!(simulate(&cl, &Inputs::zero(&cl), &opts).is_err());
        let opts = SimOptions {
            horizon: 0.05,
            step: 0.01,
            divergence_bound: 1e6,
        };
        assert!(simulate(&cl, &Inputs::zero(&cl), &opts).is_err());
    }

    #[test]
    fn default_step_rule() {
        let cl1 = build_closed_loop(&case_study::plant(), &case_study::design_one()).unwrap();
        assert_eq!(SimOptions::default_step(&cl1), 0.01);
        let plant = Plant::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let ctrl = DelayedFeedbackController::new(dmatrix![1.0], dmatrix![1.0], dmatrix![-1.0], 0.1, 0.06, 1).unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        assert!((SimOptions::default_step(&cl) - 0.003).abs() < 1e-15);
    }

    #[test]
    fn integral_state_obeys_its_equation() {
        // finite-difference q and compare with C x - r - K2 (q - q(t - τ_q))
        let cl = build_closed_loop(&case_study::plant(), &case_study::design_two()).unwrap();
        let inputs = Inputs::new(case_study::reference_step(), Signal::zero(2), Signal::zero(2));
        let traj = simulate(&cl, &inputs, &SimOptions::for_loop(&cl, 10.0)).unwrap();
        let h = traj.times[1] - traj.times[0];
        let lag = (cl.tau_q() / h).round() as usize;
        assert!(((lag as f64) * h - cl.tau_q()).abs() < 1e-12);
        let k2 = cl.controller().k2()[(0, 0)];
        let c = cl.plant().c();
        let mut worst: f64 = 0.0;
        for k in (lag + 1)..(traj.len() - 1) {
            let dq = (traj.q[k + 1][0] - traj.q[k - 1][0]) / (2.0 * h);
            let rhs = (c * &traj.x[k])[0] - 1.0 - k2 * (traj.q[k][0] - traj.q[k - lag][0]);
            worst = worst.max((dq - rhs).abs());
        }
        assert!(worst < 50.0 * h * h, "residual {worst}");
    }
}
