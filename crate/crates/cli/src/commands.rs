//! Subcommand implementations. Each returns the status that becomes the exit code.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use delayfb_core::analysis::{predict, PredictionReport};
use delayfb_core::simulator::{simulate, steady_state_error, SteadyState, Trajectory};
use delayfb_core::tuner::{search, TuneTrace};
use delayfb_core::{build_closed_loop, rightmost_roots, Error, SpectrumResult};

use crate::config::ExperimentConfig;
use crate::output::{line_chart, write_atomic, write_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Unstable,
    Diverged,
    TuneFailed,
    ChecksFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Unstable => 2,
            Status::Diverged => 3,
            Status::TuneFailed => 4,
            Status::ChecksFailed => 5,
        }
    }
}

pub fn write_roots(path: &Path, spec: &SpectrumResult) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "re,im,residual")?;
        for r in &spec.roots {
            writeln!(w, "{},{},{}", r.value.re, r.value.im, r.residual)?;
        }
        Ok(())
    })
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_with(path, |w| traj.write_csv(w))
}

pub fn write_trace(path: &Path, trace: &TuneTrace) -> Result<()> {
    write_with(path, |w| trace.write_csv(w))
}

fn component_series(prefix: &str, rows: &[nalgebra::DVector<f64>]) -> Vec<(String, Vec<f64>)> {
    let dim = rows.first().map_or(0, |r| r.len());
    (0..dim)
        .map(|j| (format!("{prefix}{}", j + 1), rows.iter().map(|r| r[j]).collect()))
        .collect()
}

/// `y.svg`, `u.svg` and `e.svg` with the given file-name prefix.
pub fn write_plots(dir: &Path, prefix: &str, title: &str, traj: &Trajectory) -> Result<()> {
    for (name, rows) in [("y", &traj.y), ("u", &traj.u), ("e", &traj.e)] {
        let svg = line_chart(&format!("{title}: {name}(t)"), &traj.times, &component_series(name, rows));
        write_atomic(&dir.join(format!("{prefix}{name}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

pub fn describe_steady_state(state: &SteadyState) -> String {
    match state.value() {
        Some(v) => {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
            format!("settled at e = [{}]", parts.join(", "))
        }
        None => "not settled".into(),
    }
}

pub fn spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Status> {
    let plant = cfg.plant()?;
    let ctrl = cfg.controller_for(&plant)?;
    let cl = build_closed_loop(&plant, &ctrl)?;
    let (count, opts) = cfg.spectrum_options();
    let spec = rightmost_roots(&cl, count, &opts)?;
    write_roots(&out.join("roots.csv"), &spec)?;
    if !spec.complete {
        eprintln!("warning: only {} of {count} roots validated", spec.roots.len());
    }
    println!("abscissa {}", spec.abscissa);
    Ok(if spec.abscissa < 0.0 { Status::Ok } else { Status::Unstable })
}

pub fn simulate_cmd(cfg: &ExperimentConfig, out: &Path, plots: bool) -> Result<Status> {
    let plant = cfg.plant()?;
    let ctrl = cfg.controller_for(&plant)?;
    let cl = build_closed_loop(&plant, &ctrl)?;
    let inputs = cfg.inputs(&plant)?;
    let traj = simulate(&cl, &inputs, &cfg.sim_options(&cl))?;
    write_trajectory(&out.join("trajectory.csv"), &traj)?;
    if plots {
        write_plots(out, "", "simulation", &traj)?;
    }
    if traj.diverged {
        println!("diverged at t = {}", traj.final_time());
        return Ok(Status::Diverged);
    }
    println!("{}", describe_steady_state(&steady_state_error(&traj)));
    Ok(Status::Ok)
}

pub fn tune(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<Status> {
    let plant = cfg.plant()?;
    let template = cfg.controller_for(&plant)?;
    let mut spec = cfg.tune_spec()?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let trace = search(&spec, &plant, &template)?;
    write_trace(&out.join("trace.csv"), &trace)?;
    if !trace.best_cost.is_finite() {
        println!("no candidate produced a validated spectrum");
        return Ok(Status::TuneFailed);
    }
    let best = spec.apply(&template, &trace.best_params)?;
    let mut tuned = cfg.with_controller(&best);
    if let Some(t) = tuned.tune.as_mut() {
        t.seed = Some(spec.seed);
    }
    let json = serde_json::to_string_pretty(&tuned)?;
    write_atomic(&out.join("tuned.json"), format!("{json}\n").as_bytes())?;
    println!("abscissa {}", trace.best_cost);
    for (name, v) in trace.names.iter().zip(&trace.best_params) {
        println!("{name} = {v}");
    }
    if trace.reached(spec.threshold) {
        Ok(Status::Ok)
    } else {
        println!("threshold {} not reached", spec.threshold);
        Ok(Status::TuneFailed)
    }
}

pub fn format_report(r: &PredictionReport) -> String {
    let vec = |v: &Option<nalgebra::DVector<f64>>| match v {
        Some(v) => {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
            format!("[{}]", parts.join(", "))
        }
        None => "-".into(),
    };
    let mut s = String::new();
    let _ = writeln!(s, "abscissa                      {:.6}", r.abscissa);
    let _ = writeln!(s, "det(I + K2 tau_q)             {:.6e}", r.condition_det);
    let _ = writeln!(s, "I + K2 tau_q = 0              {}", r.condition_full);
    let _ = writeln!(s, "d1 max rejected order         {}", r.d1_max_rejected_laplace_order);
    let _ = writeln!(
        s,
        "d1 error at order {}           {}",
        r.d1_max_rejected_laplace_order + 1,
        r.d1_error
    );
    let _ = writeln!(s, "d2 step rejected              {}", r.d2_step_rejected);
    let _ = writeln!(s, "d2 ramp rejected              {}", r.d2_ramp_rejected);
    let _ = writeln!(s, "d2 unit-ramp error            {}", vec(&r.d2_ramp_error));
    let _ = writeln!(s, "ramp reference tracked        {}", r.ramp_reference_tracked);
    let _ = writeln!(s, "unit-ramp tracking error      {}", vec(&r.ramp_tracking_error));
    s
}

pub fn predict_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Status> {
    let plant = cfg.plant()?;
    let ctrl = cfg.controller_for(&plant)?;
    match predict(&plant, &ctrl) {
        Ok(report) => {
            let text = format_report(&report);
            write_atomic(&out.join("prediction.txt"), text.as_bytes())?;
            print!("{text}");
            Ok(Status::Ok)
        }
        Err(Error::Unstable { abscissa }) => {
            println!("closed loop is not stable (abscissa {abscissa}); final values are undefined");
            Ok(Status::Unstable)
        }
        Err(e) => Err(e).context("prediction"),
    }
}
