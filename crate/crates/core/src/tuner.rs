//! Simulated-annealing search over controller parameters, minimising the
//! spectral abscissa of the closed loop.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{build_closed_loop, DelayedFeedbackController, Plant};
use crate::spectrum::{rightmost_roots, SpectrumOptions, DEFAULT_ROOT_COUNT};

/// Smallest admissible lower bound for a free delay.
pub const MIN_DELAY: f64 = 0.01;

/// A tunable scalar of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    K(usize, usize),
    K1(usize, usize),
    Tau,
    TauQ,
}

impl ParamId {
    fn is_delay(self) -> bool {
        matches!(self, ParamId::Tau | ParamId::TauQ)
    }

    /// Current value in `ctrl`, or `None` if the entry is out of range.
    pub fn get(self, ctrl: &DelayedFeedbackController) -> Option<f64> {
        match self {
            ParamId::K(i, j) => ctrl.k().get((i, j)).copied(),
            ParamId::K1(i, j) => ctrl.k1().get((i, j)).copied(),
            ParamId::Tau => Some(ctrl.tau()),
            ParamId::TauQ => Some(ctrl.tau_q()),
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::K(i, j) => write!(f, "K[{i}][{j}]"),
            ParamId::K1(i, j) => write!(f, "K1[{i}][{j}]"),
            ParamId::Tau => write!(f, "tau"),
            ParamId::TauQ => write!(f, "tau_q"),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter {
            name: "tune.free".into(),
            reason: format!("unknown parameter `{s}` (expected K[i][j], K1[i][j], tau or tau_q)"),
        };
        match s {
            "tau" => return Ok(ParamId::Tau),
            "tau_q" => return Ok(ParamId::TauQ),
            _ => {}
        }
        let (name, rest) = s.split_once('[').ok_or_else(bad)?;
        let rest = rest.strip_suffix(']').ok_or_else(bad)?;
        let (i, j) = rest.split_once("][").ok_or_else(bad)?;
        let i: usize = i.parse().map_err(|_| bad())?;
        let j: usize = j.parse().map_err(|_| bad())?;
        match name {
            "K" => Ok(ParamId::K(i, j)),
            "K1" => Ok(ParamId::K1(i, j)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParam {
    pub id: ParamId,
    pub lo: f64,
    pub hi: f64,
}

impl FreeParam {
    /// Default interval: gains in [-10, 10], delays in [0.01, 2].
    pub fn with_default_bounds(id: ParamId) -> Self {
        let (lo, hi) = if id.is_delay() { (MIN_DELAY, 2.0) } else { (-10.0, 10.0) };
        Self { id, lo, hi }
    }
}

/// Parameters tied to others rather than searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `K2 = -(1/τ_q) I`.
    K2InverseTauQ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub gamma: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { t0: 1.0, gamma: 0.97 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSpec {
    pub free: Vec<FreeParam>,
    pub couplings: Vec<Coupling>,
    pub threshold: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Proposal standard deviation as a fraction of the interval width at `T = T0`.
    pub step_fraction: f64,
    /// Independent chains sharing the `max_iterations` budget equally; the
    /// best one is returned.
    pub restarts: usize,
}

impl TuneSpec {
    pub fn new(free: Vec<FreeParam>) -> Self {
        Self {
            free,
            couplings: Vec::new(),
            threshold: -1.0,
            max_iterations: 5000,
            seed: 0,
            schedule: Schedule::default(),
            step_fraction: 0.3,
            restarts: 1,
        }
    }

    /// Iterations available to each chain.
    pub fn chain_iterations(&self) -> usize {
        self.max_iterations / self.restarts.max(1)
    }

    pub fn names(&self) -> Vec<String> {
        self.free.iter().map(|p| p.id.to_string()).collect()
    }

    /// Checks the spec against nothing but itself; see `validate_for` for the
    /// controller-dependent checks.
    pub fn validate(&self) -> Result<()> {
        let invalid = |name: &str, reason: String| Error::InvalidParameter {
            name: name.to_string(),
            reason,
        };
        if self.free.is_empty() {
            return Err(invalid("tune.free", "no free parameters".into()));
        }
        for (i, p) in self.free.iter().enumerate() {
            if !(p.lo.is_finite() && p.hi.is_finite()) || p.lo > p.hi {
                return Err(invalid(
                    "tune.bounds",
                    format!("{}: invalid interval [{}, {}]", p.id, p.lo, p.hi),
                ));
            }
            if p.id.is_delay() && p.lo < MIN_DELAY {
                return Err(invalid(
                    "tune.bounds",
                    format!("{}: lower bound must be >= {MIN_DELAY}", p.id),
                ));
            }
            if self.free[..i].iter().any(|q| q.id == p.id) {
                return Err(invalid("tune.free", format!("{} listed twice", p.id)));
            }
        }
        if !(self.schedule.t0 > 0.0 && self.schedule.t0.is_finite()) {
            return Err(invalid("tune.schedule.t0", "must be positive".into()));
        }
        if !(self.schedule.gamma > 0.0 && self.schedule.gamma < 1.0) {
            return Err(invalid("tune.schedule.gamma", "must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(invalid("tune.max_iterations", "must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction.is_finite()) {
            return Err(invalid("tune.step_fraction", "must be positive".into()));
        }
        if self.restarts == 0 || self.restarts > self.max_iterations {
            return Err(invalid(
                "tune.restarts",
                "must be positive and at most max_iterations".into(),
            ));
        }
        if self.threshold.is_nan() {
            return Err(invalid("tune.threshold", "must be a number".into()));
        }
        Ok(())
    }

    fn validate_for(&self, template: &DelayedFeedbackController) -> Result<()> {
        self.validate()?;
        for p in &self.free {
            if p.id.get(template).is_none() {
                return Err(Error::InvalidParameter {
                    name: "tune.free".into(),
                    reason: format!("{} is outside the controller's gain matrices", p.id),
                });
            }
        }
        if self.couplings.contains(&Coupling::K2InverseTauQ) {
            let tau_q_free = self.free.iter().any(|p| p.id == ParamId::TauQ);
            if !tau_q_free && template.tau_q() <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "tune.couplings".into(),
                    reason: "K2 = -(1/tau_q) I needs tau_q > 0".into(),
                });
            }
        }
        Ok(())
    }

    /// `template` with the free parameters set to `values` and couplings applied.
    pub fn apply(&self, template: &DelayedFeedbackController, values: &[f64]) -> Result<DelayedFeedbackController> {
        let mut k = template.k().clone();
        let mut k1 = template.k1().clone();
        let mut tau = template.tau();
        let mut tau_q = template.tau_q();
        for (p, v) in self.free.iter().zip(values) {
            match p.id {
                ParamId::K(i, j) => k[(i, j)] = *v,
                ParamId::K1(i, j) => k1[(i, j)] = *v,
                ParamId::Tau => tau = *v,
                ParamId::TauQ => tau_q = *v,
            }
        }
        let mut k2 = template.k2().clone();
        for c in &self.couplings {
            match c {
                Coupling::K2InverseTauQ => {
                    let m = k2.nrows();
                    k2 = DMatrix::<f64>::identity(m, m) * (-1.0 / tau_q);
                }
            }
        }
        DelayedFeedbackController::new(k, k1, k2, tau, tau_q, template.p())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub temperature: f64,
    pub params: Vec<f64>,
    pub cost: f64,
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneTrace {
    pub names: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub best_params: Vec<f64>,
    pub best_cost: f64,
    /// Index of the chain that produced this trace.
    pub chain: usize,
}

impl TuneTrace {
    pub fn reached(&self, threshold: f64) -> bool {
        self.best_cost < threshold
    }

    /// `iter,T,cost,best_cost,<param columns>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "iter,T,cost,best_cost")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(w, "{},{:e},{:e},{:e}", r.iteration, r.temperature, r.cost, r.best_cost)?;
            for v in &r.params {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Spectral abscissa of the loop, or `+∞` when no root could be validated.
pub fn cost(plant: &Plant, ctrl: &DelayedFeedbackController) -> f64 {
    let Ok(cl) = build_closed_loop(plant, ctrl) else {
        return f64::INFINITY;
    };
    match rightmost_roots(&cl, DEFAULT_ROOT_COUNT, &SpectrumOptions::default()) {
        Ok(spec) if spec.abscissa.is_finite() => spec.abscissa,
        _ => f64::INFINITY,
    }
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return lo;
    }
    // fold into [lo, lo + 2 width) then mirror the upper half
    v = (v - lo).rem_euclid(2.0 * width);
    if v > width {
        v = 2.0 * width - v;
    }
    lo + v
}

fn run_chain<F>(spec: &TuneSpec, start: &[f64], chain: usize, cost_fn: &F) -> TuneTrace
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(chain as u64);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut current = start.to_vec();
    let mut current_cost = cost_fn(&current);
    let mut best = current.clone();
    let mut best_cost = current_cost;
    let mut temperature = spec.schedule.t0;
    let mut records = vec![TraceRecord {
        iteration: 0,
        temperature,
        params: current.clone(),
        cost: current_cost,
        best_cost,
    }];
    for iteration in 1..=spec.chain_iterations() {
        if best_cost < spec.threshold {
            break;
        }
        let scale = spec.step_fraction * temperature / spec.schedule.t0;
        let candidate: Vec<f64> = spec
            .free
            .iter()
            .zip(&current)
            .map(|(p, v)| reflect(v + unit.sample(&mut rng) * scale * (p.hi - p.lo), p.lo, p.hi))
            .collect();
        let cand_cost = cost_fn(&candidate);
        let delta = cand_cost - current_cost;
        let u: f64 = rng.random();
        let accept = cand_cost <= current_cost || u < (-delta / temperature).exp();
        if accept {
            current = candidate.clone();
            current_cost = cand_cost;
        }
        if cand_cost < best_cost {
            best = candidate.clone();
            best_cost = cand_cost;
        }
        records.push(TraceRecord {
            iteration,
            temperature,
            params: candidate,
            cost: cand_cost,
            best_cost,
        });
        temperature *= spec.schedule.gamma;
    }
    TuneTrace {
        names: spec.names(),
        records,
        best_params: best,
        best_cost,
        chain,
    }
}

/// Runs every chain and returns the best trace, even when no candidate had a
/// finite cost. Chains run in parallel; ties go to the lowest index.
pub fn search_with<F>(spec: &TuneSpec, start: &[f64], cost_fn: F) -> Result<TuneTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    if start.len() != spec.free.len() {
        return Err(Error::InvalidParameter {
            name: "tune.start".into(),
            reason: format!("expected {} values, got {}", spec.free.len(), start.len()),
        });
    }
    let start: Vec<f64> = spec
        .free
        .iter()
        .zip(start)
        .map(|(p, v)| if v.is_finite() { v.clamp(p.lo, p.hi) } else { 0.5 * (p.lo + p.hi) })
        .collect();
    let traces: Vec<TuneTrace> = (0..spec.restarts)
        .into_par_iter()
        .map(|chain| run_chain(spec, &start, chain, &cost_fn))
        .collect();
    Ok(traces
        .into_iter()
        .min_by(|a, b| a.best_cost.total_cmp(&b.best_cost).then(a.chain.cmp(&b.chain)))
        .expect("at least one chain"))
}

/// Anneals an arbitrary cost over the box of `spec`, starting from `start`
/// (clamped into the box).
pub fn anneal_with<F>(spec: &TuneSpec, start: &[f64], cost_fn: F) -> Result<TuneTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let trace = search_with(spec, start, cost_fn)?;
    if !trace.best_cost.is_finite() {
        return Err(Error::TuneFailed);
    }
    Ok(trace)
}

/// Controller search from the template's own values; returns the trace even
/// when every candidate failed.
pub fn search(spec: &TuneSpec, plant: &Plant, template: &DelayedFeedbackController) -> Result<TuneTrace> {
    spec.validate_for(template)?;
    build_closed_loop(plant, template)?;
    let start: Vec<f64> = spec
        .free
        .iter()
        .map(|p| p.id.get(template).expect("validated"))
        .collect();
    search_with(spec, &start, |values| match spec.apply(template, values) {
        Ok(ctrl) => cost(plant, &ctrl),
        Err(_) => f64::INFINITY,
    })
}

/// Tunes the free parameters of `template` on `plant`.
pub fn anneal(spec: &TuneSpec, plant: &Plant, template: &DelayedFeedbackController) -> Result<(DelayedFeedbackController, TuneTrace)> {
    let trace = search(spec, plant, template)?;
    if !trace.best_cost.is_finite() {
        return Err(Error::TuneFailed);
    }
    let best = spec.apply(template, &trace.best_params)?;
    Ok((best, trace))
}

/// The free set used for the first case-study design: both entries of K, K1
/// and τ, with 10 chains of 500 iterations.
pub fn case_study_spec(seed: u64) -> TuneSpec {
    let free = [ParamId::K(0, 0), ParamId::K(0, 1), ParamId::K1(0, 0), ParamId::Tau]
        .into_iter()
        .map(FreeParam::with_default_bounds)
        .collect();
    TuneSpec {
        seed,
        restarts: 10,
        ..TuneSpec::new(free)
    }
}
