//! Steady-state predictions for disturbance rejection and reference tracking,
//! the conventional pole-placement baseline, and the method comparison table.
//!
//! Final values are obtained from the Laplace-domain error
//! `E(s) = [C 0] Δ(s)^{-1} F(s) (- R(s))`. For a stable loop `Δ(0)` is
//! invertible, so `Δ(s)^{-1}` has a power series `Σ R_j s^j` and, for a forcing
//! of Laplace order `k`, `s E(s) = s^{1-k} P(s)` with `P` a power series. The
//! error settles to `P_{k-1}` when `P_0 .. P_{k-2}` vanish and grows otherwise.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{is_conjugate_closed, poly_from_roots, singular_value_ratio};
use crate::model::{build_augmented, build_closed_loop, ClosedLoopDDE, DelayedFeedbackController, Plant};
use crate::signal::Signal;
use crate::simulator::{simulate, steady_state_error, Inputs, SimOptions, SteadyState};
use crate::spectrum::{rightmost_roots, SpectrumOptions};
use num_complex::Complex64;

/// `|det(I + K2 τ_q)|` below this counts as zero.
pub const CONDITION_TOL: f64 = 1e-9;
/// A simulated error settled below this counts as rejected/tracked.
pub const REJECTION_TOL: f64 = 1e-3;
/// Relative size below which a series coefficient counts as zero.
const SERIES_ZERO_TOL: f64 = 1e-9;

/// Where a signal enters the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Sensor disturbance on the measured state.
    SensorD1,
    /// Additive plant disturbance on `x'`.
    PlantD2,
    Reference,
}

/// Long-run behaviour of the tracking error.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalValue {
    Zero,
    Finite(DVector<f64>),
    Unbounded,
}

impl FinalValue {
    pub fn is_zero(&self) -> bool {
        matches!(self, FinalValue::Zero)
    }

    pub fn finite(&self) -> Option<&DVector<f64>> {
        match self {
            FinalValue::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for FinalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalValue::Zero => write!(f, "0"),
            FinalValue::Unbounded => write!(f, "unbounded"),
            FinalValue::Finite(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

/// Taylor coefficients `Δ_0 .. Δ_order` of the characteristic matrix at `s = 0`.
fn char_matrix_taylor(cl: &ClosedLoopDDE, order: usize) -> Vec<DMatrix<f64>> {
    let d = cl.dim();
    let weights = cl.weights();
    let mut out = Vec::with_capacity(order + 1);
    let mut factorial = 1.0;
    for l in 0..=order {
        if l > 0 {
            factorial *= l as f64;
        }
        // coefficient of s^l in e^{-s h} is (-h)^l / l!
        let shifted: f64 = (1..weights.len())
            .map(|i| weights[i] as f64 * (-(i as f64) * cl.tau()).powi(l as i32) / factorial)
            .sum();
        let mut m = -(cl.a1() * shifted);
        if cl.integral_delay_active() {
            m -= cl.a2() * ((-cl.tau_q()).powi(l as i32) / factorial);
        }
        match l {
            0 => m -= cl.a0(),
            1 => m += DMatrix::<f64>::identity(d, d),
            _ => {}
        }
        out.push(m);
    }
    out
}

/// Power-series coefficients of `Δ(s)^{-1}` up to `order`.
fn inverse_series(cl: &ClosedLoopDDE, order: usize) -> Result<Vec<DMatrix<f64>>> {
    let delta = char_matrix_taylor(cl, order);
    let lu = delta[0].clone().lu();
    let r0 = lu
        .try_inverse()
        .ok_or_else(|| Error::LimitUndefined("s = 0 is a characteristic root".into()))?;
    let mut out = vec![r0.clone()];
    for j in 1..=order {
        let mut acc = DMatrix::zeros(cl.dim(), cl.dim());
        for l in 1..=j {
            acc += &delta[l] * &out[j - l];
        }
        out.push(-(&r0 * acc));
    }
    Ok(out)
}

/// Power series of `F(s) s^k` for a unit-order forcing with coefficient `v`.
fn forcing_series(cl: &ClosedLoopDDE, channel: Channel, v: &DVector<f64>, order: usize) -> Vec<DVector<f64>> {
    let (n, m) = (cl.n(), cl.m());
    let mut out = vec![DVector::zeros(n + m); order + 1];
    match channel {
        Channel::PlantD2 => out[0].rows_mut(0, n).copy_from(v),
        Channel::Reference => out[0].rows_mut(n, m).copy_from(&(-v)),
        Channel::SensorD1 => {
            let plant = cl.plant();
            let bkv = plant.b() * (cl.controller().k() * v);
            let weights = cl.weights();
            let mut factorial = 1.0;
            for (j, slot) in out.iter_mut().enumerate() {
                if j > 0 {
                    factorial *= j as f64;
                }
                // φ(s) = Σ_i w_i e^{-s iτ}
                let phi: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| *w as f64 * (-(i as f64) * cl.tau()).powi(j as i32) / factorial)
                    .sum();
                slot.rows_mut(0, n).copy_from(&(&bkv * -phi));
            }
        }
    }
    out
}

/// Final value of the tracking error for a forcing `v / s^k` on `channel`.
fn final_value_of_order(
    cl: &ClosedLoopDDE,
    inv: &[DMatrix<f64>],
    channel: Channel,
    v: &DVector<f64>,
    k: usize,
) -> (DVector<f64>, f64, bool) {
    let n = cl.n();
    let c = cl.plant().c();
    let forcing = forcing_series(cl, channel, v, k);
    let c_norm = c.norm();
    let mut bounded = true;
    let mut last = DVector::zeros(cl.m());
    let mut last_scale = 0.0;
    for j in 0..k {
        let mut p = DVector::zeros(cl.m());
        let mut scale = 0.0;
        for l in 0..=j {
            let g = &inv[l] * &forcing[j - l];
            p += c * g.rows(0, n);
            scale += c_norm * inv[l].norm() * forcing[j - l].norm();
        }
        if j == 0 && channel == Channel::Reference {
            p -= v;
            scale += v.norm();
        }
        if j + 1 < k {
            if p.norm() > SERIES_ZERO_TOL * scale.max(f64::MIN_POSITIVE) {
                bounded = false;
            }
        } else {
            last = p;
            last_scale = scale;
        }
    }
    (last, last_scale, bounded)
}

/// Long-run tracking error of the loop when `signal` acts on `channel`.
///
/// Requires `s = 0` not to be a characteristic root; stability itself is the
/// caller's responsibility (the predict_* functions check it).
pub fn final_error(cl: &ClosedLoopDDE, channel: Channel, signal: &Signal) -> Result<FinalValue> {
    let terms = signal.laplace_terms();
    if terms.is_empty() {
        return Ok(FinalValue::Zero);
    }
    let inv = inverse_series(cl, terms.len())?;
    let mut total = DVector::zeros(cl.m());
    let mut scale = 0.0;
    for (idx, v) in terms.iter().enumerate() {
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        let (value, s, bounded) = final_value_of_order(cl, &inv, channel, v, idx + 1);
        if !bounded {
            return Ok(FinalValue::Unbounded);
        }
        total += value;
        scale += s;
    }
    if total.norm() <= SERIES_ZERO_TOL * scale.max(f64::MIN_POSITIVE) {
        Ok(FinalValue::Zero)
    } else {
        Ok(FinalValue::Finite(total))
    }
}

/// `V / s^k` with `V` the all-ones vector on the given channel.
pub fn unit_signal(dim: usize, order: usize) -> Signal {
    let mut coeffs = vec![0.0; order];
    if order > 0 {
        // t^{k-1} / (k-1)!  ->  1 / s^k
        let fact: f64 = (1..order).map(|i| i as f64).product();
        coeffs[order - 1] = 1.0 / fact;
    }
    Signal::zero(dim)
        .with(crate::signal::SignalPiece {
            t_start: 0.0,
            coeffs,
            direction: vec![1.0; dim],
        })
        .expect("unit signal is valid")
}

fn check_stable(cl: &ClosedLoopDDE) -> Result<f64> {
    let spec = rightmost_roots(cl, 1, &SpectrumOptions::default())?;
    if spec.roots.is_empty() || spec.abscissa >= 0.0 {
        return Err(Error::Unstable {
            abscissa: spec.abscissa,
        });
    }
    Ok(spec.abscissa)
}

/// `det(I + K2 τ_q)` and whether `I + K2 τ_q = 0` entrywise.
pub fn rejection_condition(ctrl: &DelayedFeedbackController) -> (f64, bool) {
    let m = ctrl.k2().nrows();
    let mat = DMatrix::<f64>::identity(m, m) + ctrl.k2_active() * ctrl.tau_q();
    let full = mat.iter().all(|v| v.abs() < CONDITION_TOL);
    (mat.determinant(), full)
}

#[derive(Debug, Clone, PartialEq)]
pub struct D1Prediction {
    /// Largest `k` such that `d1 = V/s^k` is rejected.
    pub max_rejected_order: usize,
    /// Error limit under `V/s^{max_rejected_order + 1}`.
    pub first_unrejected: FinalValue,
}

/// Sensor-disturbance rejection: orders up to `p + 1`, or `p + 2` when
/// `det(I + K2 τ_q) = 0`.
pub fn predict_d1(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<D1Prediction> {
    let cl = build_closed_loop(plant, ctrl)?;
    check_stable(&cl)?;
    let (det, _) = rejection_condition(ctrl);
    let max_rejected_order = if det.abs() < CONDITION_TOL { ctrl.p() + 2 } else { ctrl.p() + 1 };
    let first_unrejected = final_error(&cl, Channel::SensorD1, &unit_signal(plant.n(), max_rejected_order + 1))?;
    Ok(D1Prediction {
        max_rejected_order,
        first_unrejected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct D2Prediction {
    pub step_rejected: bool,
    pub ramp_rejected: bool,
    /// Error limit under a unit ramp when it is not rejected.
    pub ramp_error: Option<DVector<f64>>,
}

/// Plant-disturbance rejection: steps always, ramps iff `det(I + K2 τ_q) = 0`.
pub fn predict_d2(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<D2Prediction> {
    let cl = build_closed_loop(plant, ctrl)?;
    check_stable(&cl)?;
    let (det, _) = rejection_condition(ctrl);
    let ramp_rejected = det.abs() < CONDITION_TOL;
    let ramp_error = if ramp_rejected {
        None
    } else {
        final_error(&cl, Channel::PlantD2, &unit_signal(plant.n(), 2))?
            .finite()
            .cloned()
    };
    Ok(D2Prediction {
        step_rejected: true,
        ramp_rejected,
        ramp_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPrediction {
    pub step_tracked: bool,
    pub ramp_tracked: bool,
    /// Error limit under a unit ramp reference when it is not tracked.
    pub ramp_error: Option<DVector<f64>>,
}

/// Reference tracking: steps always, ramps iff `I + K2 τ_q = 0`.
pub fn predict_tracking(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<TrackingPrediction> {
    let cl = build_closed_loop(plant, ctrl)?;
    check_stable(&cl)?;
    let (_, full) = rejection_condition(ctrl);
    let ramp_error = if full {
        None
    } else {
        final_error(&cl, Channel::Reference, &unit_signal(plant.m(), 2))?
            .finite()
            .cloned()
    };
    Ok(TrackingPrediction {
        step_tracked: true,
        ramp_tracked: full,
        ramp_error,
    })
}

/// Everything the final-value analysis says about one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub abscissa: f64,
    pub d1_max_rejected_laplace_order: usize,
    pub d2_step_rejected: bool,
    pub d2_ramp_rejected: bool,
    pub ramp_reference_tracked: bool,
    /// Error under `V/s^{d1_max_rejected_laplace_order + 1}` on d1.
    pub d1_error: FinalValue,
    /// Error under a unit ramp d2, when not rejected.
    pub d2_ramp_error: Option<DVector<f64>>,
    /// Error under a unit ramp reference, when not tracked.
    pub ramp_tracking_error: Option<DVector<f64>>,
    pub condition_det: f64,
    pub condition_full: bool,
}

pub fn predict(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<PredictionReport> {
    let cl = build_closed_loop(plant, ctrl)?;
    let abscissa = check_stable(&cl)?;
    let d1 = predict_d1(plant, ctrl)?;
    let d2 = predict_d2(plant, ctrl)?;
    let tr = predict_tracking(plant, ctrl)?;
    let (condition_det, condition_full) = rejection_condition(ctrl);
    Ok(PredictionReport {
        abscissa,
        d1_max_rejected_laplace_order: d1.max_rejected_order,
        d2_step_rejected: d2.step_rejected,
        d2_ramp_rejected: d2.ramp_rejected,
        ramp_reference_tracked: tr.ramp_tracked,
        d1_error: d1.first_unrejected,
        d2_ramp_error: d2.ramp_error,
        ramp_tracking_error: tr.ramp_error,
        condition_det,
        condition_full,
    })
}

/// `(C A_eff^{-1} B K1)^{-1}` and `A_eff^{-1}` with `A_eff = A - B K φ(0)`,
/// where `φ(0) = 1` for `p = 0` and `0` otherwise.
fn closed_form_factors(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a_eff = if ctrl.p() == 0 {
        plant.a() - plant.b() * ctrl.k()
    } else {
        plant.a().clone()
    };
    let a_inv = a_eff
        .try_inverse()
        .ok_or_else(|| Error::LimitUndefined("A is singular; use simulation".into()))?;
    let gain = plant.c() * &a_inv * plant.b() * ctrl.k1();
    let gain_inv = gain
        .try_inverse()
        .ok_or_else(|| Error::LimitUndefined("C A^-1 B K1 is singular".into()))?;
    Ok((gain_inv, a_inv))
}

fn integral_factor(ctrl: &DelayedFeedbackController) -> DMatrix<f64> {
    let m = ctrl.k2().nrows();
    DMatrix::<f64>::identity(m, m) + ctrl.k2_active() * ctrl.tau_q()
}

/// Closed-form ramp-reference error `(I + K2 τ_q)(C A^{-1} B K1)^{-1} M`.
pub fn closed_form_ramp_tracking_error(
    plant: &Plant,
    ctrl: &DelayedFeedbackController,
    slope: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (gain_inv, _) = closed_form_factors(plant, ctrl)?;
    Ok(integral_factor(ctrl) * gain_inv * slope)
}

/// Closed-form ramp plant-disturbance error
/// `(I + K2 τ_q)(C A^{-1} B K1)^{-1} C A^{-1} V`.
pub fn closed_form_d2_ramp_error(
    plant: &Plant,
    ctrl: &DelayedFeedbackController,
    slope: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (gain_inv, a_inv) = closed_form_factors(plant, ctrl)?;
    Ok(integral_factor(ctrl) * gain_inv * plant.c() * a_inv * slope)
}

/// Closed-form error under `d1 = V/s^{p+2}`:
/// `-(I + K2 τ_q)(C A^{-1} B K1)^{-1} C A^{-1} B K τ^p V`.
pub fn closed_form_d1_error(
    plant: &Plant,
    ctrl: &DelayedFeedbackController,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (gain_inv, a_inv) = closed_form_factors(plant, ctrl)?;
    let tau_p = ctrl.tau().powi(ctrl.p() as i32);
    let forced = plant.b() * (ctrl.k() * v) * tau_p;
    Ok(-(integral_factor(ctrl) * gain_inv * plant.c() * a_inv * forced))
}

/// Ackermann pole placement on the augmented pair; returns `[K' K'']`.
pub fn design_baseline(plant: &Plant, poles: &[Complex64]) -> Result<DMatrix<f64>> {
    if plant.r() != 1 {
        return Err(Error::Unsupported(format!(
            "pole placement needs a single input, plant has {}",
            plant.r()
        )));
    }
    let (a_aug, b_aug) = build_augmented(plant);
    let d = a_aug.nrows();
    if poles.len() != d {
        return Err(Error::InvalidParameter {
            name: "poles".into(),
            reason: format!("expected {d} poles, got {}", poles.len()),
        });
    }
    if !is_conjugate_closed(poles, 1e-9 * poles.iter().map(|p| p.norm()).fold(1.0, f64::max)) {
        return Err(Error::InvalidParameter {
            name: "poles".into(),
            reason: "pole set must be closed under conjugation".into(),
        });
    }
    let mut ctrb = DMatrix::zeros(d, d);
    let mut col = b_aug.column(0).into_owned();
    for j in 0..d {
        ctrb.set_column(j, &col);
        col = &a_aug * col;
    }
    let ratio = singular_value_ratio(&ctrb.map(|v| Complex64::new(v, 0.0)));
    if ratio < 1e-12 {
        return Err(Error::Uncontrollable);
    }
    // desired polynomial evaluated at A_aug (Horner)
    let coeffs = poly_from_roots(poles);
    let mut phi = DMatrix::zeros(d, d);
    for c in coeffs.iter().rev() {
        phi = &phi * &a_aug + DMatrix::<f64>::identity(d, d) * *c;
    }
    let ctrb_inv = ctrb.try_inverse().ok_or(Error::Uncontrollable)?;
    let mut last = DMatrix::zeros(1, d);
    last[(0, d - 1)] = 1.0;
    Ok(last * ctrb_inv * phi)
}

/// Conventional controller realising the given augmented pole set.
pub fn baseline_controller(plant: &Plant, poles: &[Complex64]) -> Result<DelayedFeedbackController> {
    let gain = design_baseline(plant, poles)?;
    let n = plant.n();
    let k = gain.columns(0, n).into_owned();
    let k1 = gain.columns(n, plant.m()).into_owned();
    DelayedFeedbackController::conventional(k, k1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Proposed,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    D1,
    D2,
    Tracking,
}

/// Laplace order of the test signal: 1 (step), 2 (ramp), 3 (parabola).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    One,
    Two,
    Higher,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Proposed, Method::Conventional];

    pub fn label(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Conventional => "conventional",
        }
    }
}

impl Category {
    pub const ALL: [Category; 3] = [Category::D1, Category::D2, Category::Tracking];

    pub fn label(self) -> &'static str {
        match self {
            Category::D1 => "d1",
            Category::D2 => "d2",
            Category::Tracking => "tracking",
        }
    }

    fn channel(self) -> Channel {
        match self {
            Category::D1 => Channel::SensorD1,
            Category::D2 => Channel::PlantD2,
            Category::Tracking => Channel::Reference,
        }
    }
}

impl Order {
    pub const ALL: [Order; 3] = [Order::One, Order::Two, Order::Higher];

    pub fn label(self) -> &'static str {
        match self {
            Order::One => "One",
            Order::Two => "Two",
            Order::Higher => "Higher",
        }
    }

    pub fn laplace(self) -> usize {
        match self {
            Order::One => 1,
            Order::Two => 2,
            Order::Higher => 3,
        }
    }
}

/// Published Yes/No pattern of the comparison.
pub fn expected_pattern(method: Method, category: Category) -> [bool; 3] {
    match (method, category) {
        (Method::Proposed, Category::D1) => [true, true, true],
        (Method::Proposed, _) => [true, true, false],
        (Method::Conventional, _) => [true, false, false],
    }
}

/// Unit-Laplace test signal `V/s^k` starting at `onset`: disturbances start
/// at t = 10 s, references at t = 0.
pub fn table_signal(category: Category, order: Order, dim: usize) -> Signal {
    let k = order.laplace();
    let onset = match category {
        Category::Tracking => 0.0,
        _ => 10.0,
    };
    let fact: f64 = (1..k).map(|i| i as f64).product();
    let mut coeffs = vec![0.0; k];
    coeffs[k - 1] = 1.0 / fact;
    Signal::zero(dim)
        .with(crate::signal::SignalPiece {
            t_start: onset,
            coeffs,
            direction: vec![1.0; dim],
        })
        .expect("table signal is valid")
}

/// Inputs with `signal` on the channel of `category` and everything else zero.
pub fn inputs_for(cl: &ClosedLoopDDE, category: Category, signal: Signal) -> Inputs {
    let mut inputs = Inputs::zero(cl);
    match category {
        Category::D1 => inputs.d1 = signal,
        Category::D2 => inputs.d2 = signal,
        Category::Tracking => inputs.reference = signal,
    }
    inputs
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub method: Method,
    pub category: Category,
    pub order: Order,
    pub predicted: bool,
    pub simulated: bool,
    pub predicted_error: FinalValue,
    pub simulated_error: SteadyState,
}

impl TableCell {
    pub fn conflict(&self) -> bool {
        self.predicted != self.simulated
    }

    pub fn matches_expected(&self) -> bool {
        let idx = Order::ALL.iter().position(|o| *o == self.order).unwrap_or(0);
        let expected = expected_pattern(self.method, self.category)[idx];
        self.predicted == expected && self.simulated == expected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub cells: Vec<TableCell>,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

impl ComparisonTable {
    pub fn cell(&self, method: Method, category: Category, order: Order) -> Option<&TableCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.category == category && c.order == order)
    }

    pub fn conflicts(&self) -> Vec<&TableCell> {
        self.cells.iter().filter(|c| c.conflict()).collect()
    }

    pub fn all_match_expected(&self) -> bool {
        self.cells.iter().all(TableCell::matches_expected)
    }

    /// `category,order,predicted,simulated`, with the method folded into the
    /// category column (e.g. `d1_proposed`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,order,predicted,simulated\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}_{},{},{},{}\n",
                c.category.label(),
                c.method.label(),
                c.order.label(),
                yes_no(c.predicted),
                yes_no(c.simulated)
            ));
        }
        out
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:<14} {:<14} {:<14}", "order", "One", "Two", "Higher")?;
        for category in Category::ALL {
            for method in Method::ALL {
                write!(f, "{:<24}", format!("{} {}", category.label(), method.label()))?;
                for order in Order::ALL {
                    let text = match self.cell(method, category, order) {
                        Some(c) if c.conflict() => format!("CONFLICT({}/{})", yes_no(c.predicted), yes_no(c.simulated)),
                        Some(c) => yes_no(c.predicted).to_string(),
                        None => "-".to_string(),
                    };
                    write!(f, " {text:<14}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Decides every cell twice: from the final-value analysis and from a 60 s
/// simulation with the matching unit-Laplace test signal.
pub fn comparison_table(
    plant: &Plant,
    proposed: &DelayedFeedbackController,
    baseline: &DelayedFeedbackController,
    horizon: f64,
) -> Result<ComparisonTable> {
    let loops = [
        (Method::Proposed, build_closed_loop(plant, proposed)?),
        (Method::Conventional, build_closed_loop(plant, baseline)?),
    ];
    for (_, cl) in &loops {
        check_stable(cl)?;
    }
    let jobs: Vec<(Method, Category, Order)> = Method::ALL
        .iter()
        .flat_map(|m| Category::ALL.iter().flat_map(move |c| Order::ALL.iter().map(move |o| (*m, *c, *o))))
        .collect();
    let cells: Result<Vec<TableCell>> = jobs
        .par_iter()
        .map(|&(method, category, order)| {
            let cl = &loops.iter().find(|(m, _)| *m == method).expect("both methods built").1;
            let dim = match category {
                Category::Tracking => cl.m(),
                _ => cl.n(),
            };
            let signal = table_signal(category, order, dim);
            let predicted_error = final_error(cl, category.channel(), &signal)?;
            let traj = simulate(cl, &inputs_for(cl, category, signal), &SimOptions::for_loop(cl, horizon))?;
            let simulated_error = steady_state_error(&traj);
            Ok(TableCell {
                method,
                category,
                order,
                predicted: predicted_error.is_zero(),
                simulated: simulated_error.is_zero_within(REJECTION_TOL),
                predicted_error,
                simulated_error,
            })
        })
        .collect();
    Ok(ComparisonTable { cells: cells? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::linalg::{eigenvalues, max_matched_distance};
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn rel_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(a.norm())
    }

    #[test]
    fn design_one_prediction() {
        let plant = case_study::plant();
        let report = predict(&plant, &case_study::design_one()).unwrap();
        assert_eq!(report.condition_det, 1.0);
        assert!(!report.condition_full);
        assert_eq!(report.d1_max_rejected_laplace_order, 2);
        assert!(report.d2_step_rejected && !report.d2_ramp_rejected);
        assert!(!report.ramp_reference_tracked);
        assert!(report.d2_ramp_error.as_ref().unwrap().norm() > 1e-3);
        assert!(report.ramp_tracking_error.as_ref().unwrap().norm() > 1e-3);
        assert!(matches!(report.d1_error, FinalValue::Finite(_)));
    }

    #[test]
    fn design_two_prediction() {
        let plant = case_study::plant();
        let report = predict(&plant, &case_study::design_two()).unwrap();
        assert!(report.condition_det.abs() < 1e-12);
        assert!(report.condition_full);
        assert_eq!(report.d1_max_rejected_laplace_order, 3);
        assert!(report.d2_ramp_rejected && report.ramp_reference_tracked);
        assert!(report.d2_ramp_error.is_none() && report.ramp_tracking_error.is_none());
    }

    #[test]
    fn baseline_prediction() {
        let plant = case_study::plant();
        let base = baseline_controller(&plant, &case_study::dominant_roots()).unwrap();
        let report = predict(&plant, &base).unwrap();
        assert_eq!(report.d1_max_rejected_laplace_order, 1);
        assert!(report.d2_step_rejected && !report.d2_ramp_rejected && !report.ramp_reference_tracked);
    }

    #[test]
    fn series_verdicts_agree_with_condition_logic() {
        let plant = case_study::plant();
        let base = baseline_controller(&plant, &case_study::dominant_roots()).unwrap();
        for ctrl in [case_study::design_one(), case_study::design_two(), base] {
            let cl = build_closed_loop(&plant, &ctrl).unwrap();
            let report = predict(&plant, &ctrl).unwrap();
            for k in 1..=5 {
                let fv = final_error(&cl, Channel::SensorD1, &unit_signal(2, k)).unwrap();
                assert_eq!(fv.is_zero(), k <= report.d1_max_rejected_laplace_order, "d1 order {k}");
            }
            let ramp = final_error(&cl, Channel::PlantD2, &unit_signal(2, 2)).unwrap();
            assert_eq!(ramp.is_zero(), report.d2_ramp_rejected);
            assert!(final_error(&cl, Channel::PlantD2, &unit_signal(2, 1)).unwrap().is_zero());
            let ramp = final_error(&cl, Channel::Reference, &unit_signal(1, 2)).unwrap();
            assert_eq!(ramp.is_zero(), report.ramp_reference_tracked);
            assert!(final_error(&cl, Channel::Reference, &unit_signal(1, 1)).unwrap().is_zero());
        }
    }

    #[test]
    fn closed_forms_match_series() {
        let plant = case_study::plant();
        let base = baseline_controller(&plant, &case_study::dominant_roots()).unwrap();
        let ones = DVector::from_element(2, 1.0);
        let one = DVector::from_element(1, 1.0);
        for ctrl in [
            case_study::design_one(),
            base,
            case_study::design_two_with(0.44, -0.9 / 0.44),
        ] {
            let cl = build_closed_loop(&plant, &ctrl).unwrap();
            let series = final_error(&cl, Channel::Reference, &unit_signal(1, 2)).unwrap();
            let closed = closed_form_ramp_tracking_error(&plant, &ctrl, &one).unwrap();
            assert!(rel_close(series.finite().unwrap(), &closed, 1e-9));

            let series = final_error(&cl, Channel::PlantD2, &unit_signal(2, 2)).unwrap();
            let closed = closed_form_d2_ramp_error(&plant, &ctrl, &ones).unwrap();
            assert!(rel_close(series.finite().unwrap(), &closed, 1e-9));

            let k = ctrl.p() + 2;
            let series = final_error(&cl, Channel::SensorD1, &unit_signal(2, k)).unwrap();
            let closed = closed_form_d1_error(&plant, &ctrl, &ones).unwrap();
            assert!(rel_close(series.finite().unwrap(), &closed, 1e-9));
        }
    }

    #[test]
    fn unstable_loop_is_refused() {
        let plant = case_study::plant();
        assert!(matches!(
            predict_d1(&plant, &case_study::zero_gain()),
            Err(Error::Unstable { .. })
        ));
        assert!(predict_tracking(&plant, &case_study::zero_gain()).is_err());
    }

    #[test]
    fn singular_a_closed_form_is_undefined() {
        let plant = Plant::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0], dmatrix![1.0, 0.0]).unwrap();
        let ctrl = DelayedFeedbackController::new(dmatrix![1.0, 1.0], dmatrix![1.0], dmatrix![0.0], 0.1, 0.0, 1)
            .unwrap();
        assert!(matches!(
            closed_form_ramp_tracking_error(&plant, &ctrl, &DVector::from_element(1, 1.0)),
            Err(Error::LimitUndefined(_))
        ));
    }

    #[test]
    fn baseline_places_case_study_poles() {
        let plant = case_study::plant();
        let gain = design_baseline(&plant, &case_study::dominant_roots()).unwrap();
        let (a_aug, b_aug) = build_augmented(&plant);
        let eig = eigenvalues(&(a_aug - b_aug * gain));
        assert!(max_matched_distance(&eig, &case_study::dominant_roots()) < 1e-8);
    }

    #[test]
    fn baseline_double_integrator_pole() {
        // x' = u, q' = x; poles {-1, -1} -> s^2 + 2s + 1 -> gain [2, 1]
        let plant = Plant::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let poles = [Complex64::new(-1.0, 0.0), Complex64::new(-1.0, 0.0)];
        let gain = design_baseline(&plant, &poles).unwrap();
        assert!((gain[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((gain[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_errors() {
        let plant = case_study::plant();
        let bad = [Complex64::new(-1.0, 1.0), Complex64::new(-1.0, 0.5), Complex64::new(-2.0, 0.0)];
        assert!(design_baseline(&plant, &bad).is_err());
        assert!(design_baseline(&plant, &case_study::dominant_roots()[..2]).is_err());
        let unctrb = Plant::new(dmatrix![-1.0, 0.0; 0.0, -2.0], dmatrix![1.0; 0.0], dmatrix![1.0, 1.0]).unwrap();
        assert_eq!(
            design_baseline(&unctrb, &case_study::dominant_roots()),
            Err(Error::Uncontrollable)
        );
        let mimo = Plant::new(dmatrix![-1.0], dmatrix![1.0, 1.0], dmatrix![1.0]).unwrap();
        assert!(matches!(design_baseline(&mimo, &[Complex64::new(-1.0, 0.0); 2]), Err(Error::Unsupported(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn baseline_places_random_poles(
            a in proptest::collection::vec(-3.0f64..3.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 2),
            c in proptest::collection::vec(-2.0f64..2.0, 2),
            re in proptest::collection::vec(-4.0f64..-0.2, 2),
            im in 0.1f64..2.0,
        ) {
            let plant = Plant::new(
                DMatrix::from_row_slice(2, 2, &a),
                DMatrix::from_row_slice(2, 1, &b),
                DMatrix::from_row_slice(1, 2, &c),
            ).unwrap();
            let (a_aug, b_aug) = build_augmented(&plant);
            let mut ctrb = DMatrix::zeros(3, 3);
            let mut col = b_aug.column(0).into_owned();
            for j in 0..3 { ctrb.set_column(j, &col); col = &a_aug * col; }
            let sv = ctrb.singular_values();
            prop_assume!(sv.min() / sv.max() > 1e-3);
            let poles = [Complex64::new(re[0], im), Complex64::new(re[0], -im), Complex64::new(re[1], 0.0)];
            let gain = design_baseline(&plant, &poles).unwrap();
            let eig = eigenvalues(&(a_aug - b_aug * gain));
            prop_assert!(max_matched_distance(&eig, &poles) < 1e-8);
        }
    }
}
