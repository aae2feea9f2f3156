//! End-to-end case-study run: spectra, trajectories, the comparison table, a
//! tuning trace and a pass/fail summary.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use delayfb_core::analysis::{
    baseline_controller, comparison_table, final_error, inputs_for, predict, predict_d1, Category, Channel,
    ComparisonTable, FinalValue,
};
use delayfb_core::case_study as cs;
use delayfb_core::linalg::{eigenvalues, max_matched_distance};
use delayfb_core::simulator::{simulate, simulate_from, steady_state_error, Inputs, SimOptions, SteadyState, Trajectory};
use delayfb_core::spectrum::{newton_refine, NewtonOptions};
use delayfb_core::tuner::{anneal_with, case_study_spec, search, FreeParam, ParamId, TuneSpec, TuneTrace};
use delayfb_core::{
    build_closed_loop, rightmost_roots, ClosedLoopDDE, DelayedFeedbackController, Plant, Signal, SignalPiece,
    SpectrumOptions, SpectrumResult,
};
use nalgebra::{dmatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::commands::{describe_steady_state, write_plots, write_roots, write_trace, write_trajectory, Status};
use crate::output::write_atomic;

pub struct ReproduceOptions {
    pub seed: u64,
    pub plots: bool,
    /// Overrides design two's τ_q while K2 stays at -1/0.44.
    pub design2_tau_q: Option<f64>,
}

struct Run {
    name: &'static str,
    traj: Trajectory,
    state: SteadyState,
}

fn scenario(name: &'static str, ctrl: &DelayedFeedbackController, inputs: fn(&ClosedLoopDDE) -> Inputs) -> Result<Run> {
    let cl = build_closed_loop(&cs::plant(), ctrl)?;
    let traj = simulate(&cl, &inputs(&cl), &SimOptions::for_loop(&cl, cs::HORIZON))?;
    let state = steady_state_error(&traj);
    Ok(Run { name, traj, state })
}

fn fig4(cl: &ClosedLoopDDE) -> Inputs {
    Inputs {
        d1: cs::d1_step_ramp(),
        ..Inputs::zero(cl)
    }
}

fn fig7(cl: &ClosedLoopDDE) -> Inputs {
    Inputs {
        reference: cs::reference_step(),
        d1: cs::d1_parabola(),
        d2: cs::d2_step_ramp(),
        ..Inputs::zero(cl)
    }
}

fn fig8(cl: &ClosedLoopDDE) -> Inputs {
    Inputs {
        reference: cs::reference_step_ramp(),
        d1: cs::d1_parabola(),
        d2: cs::d2_step_ramp(),
        ..Inputs::zero(cl)
    }
}

struct Summary {
    lines: Vec<String>,
    failed: usize,
}

impl Summary {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        self.lines
            .push(format!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
    }
}

fn fig8_prediction(ctrl: &DelayedFeedbackController) -> Result<FinalValue> {
    let cl = build_closed_loop(&cs::plant(), ctrl)?;
    let mut total = DVector::zeros(1);
    for (channel, signal) in [
        (Channel::Reference, cs::reference_step_ramp()),
        (Channel::SensorD1, cs::d1_parabola()),
        (Channel::PlantD2, cs::d2_step_ramp()),
    ] {
        match final_error(&cl, channel, &signal)? {
            FinalValue::Zero => {}
            FinalValue::Finite(v) => total += v,
            FinalValue::Unbounded => return Ok(FinalValue::Unbounded),
        }
    }
    Ok(if total.amax() == 0.0 {
        FinalValue::Zero
    } else {
        FinalValue::Finite(total)
    })
}

fn cubic_d1() -> Signal {
    Signal::new(
        2,
        vec![SignalPiece {
            t_start: 10.0,
            coeffs: vec![0.0, 0.0, 0.0, 1.0 / 6.0],
            direction: vec![1.0, 1.0],
        }],
    )
    .expect("valid signal")
}

fn integrator_ratio(cl: &ClosedLoopDDE) -> Result<f64> {
    let g0 = DVector::from_vec(vec![1.0, -0.5, 0.2]);
    let err = |step: f64| -> Result<f64> {
        let opts = SimOptions {
            step,
            ..SimOptions::for_loop(cl, 5.0)
        };
        let traj = simulate_from(cl, &g0, &Inputs::zero(cl), &opts)?;
        let mut worst = 0.0_f64;
        for (i, t) in traj.times.iter().enumerate() {
            let exact = (cl.a0() * *t).exp() * &g0;
            let got = DVector::from_iterator(g0.len(), traj.x[i].iter().chain(traj.q[i].iter()).copied());
            worst = worst.max((got - exact).amax());
        }
        Ok(worst)
    };
    Ok(err(0.1)? / err(0.05)?)
}

fn zero_template() -> DelayedFeedbackController {
    DelayedFeedbackController::new(dmatrix![0.0, 0.0], dmatrix![0.0], dmatrix![0.0], 1.0, 0.0, 1)
        .expect("valid template")
}

fn spectra(designs: &[(&'static str, DelayedFeedbackController)]) -> Result<Vec<(&'static str, SpectrumResult)>> {
    designs
        .par_iter()
        .map(|(name, ctrl)| {
            let cl = build_closed_loop(&cs::plant(), ctrl)?;
            Ok((*name, rightmost_roots(&cl, 10, &SpectrumOptions::default())?))
        })
        .collect()
}

pub fn run(out: &Path, opts: &ReproduceOptions) -> Result<Status> {
    let plant: Plant = cs::plant();
    let design_one = cs::design_one();
    let design_two = match opts.design2_tau_q {
        Some(tau_q) => cs::design_two_with(tau_q, -1.0 / 0.44),
        None => cs::design_two(),
    };
    let baseline = baseline_controller(&plant, &cs::dominant_roots()).context("baseline design")?;
    let detuned = cs::design_two_with(0.44, -0.9 / 0.44);

    let roots = spectra(&[
        ("design1", design_one.clone()),
        ("design2", design_two.clone()),
        ("conventional", baseline.clone()),
    ])?;
    for (name, spec) in &roots {
        write_roots(&out.join(format!("roots_{name}.csv")), spec)?;
    }

    let jobs: Vec<(&'static str, DelayedFeedbackController, fn(&ClosedLoopDDE) -> Inputs)> = vec![
        ("fig4_proposed", design_one.clone(), fig4),
        ("fig4_conventional", baseline.clone(), fig4),
        ("fig7_proposed", design_two.clone(), fig7),
        ("fig7_conventional", baseline.clone(), fig7),
        ("fig8_proposed", design_two.clone(), fig8),
        ("fig8_detuned", detuned.clone(), fig8),
    ];
    let runs: Vec<Run> = jobs
        .par_iter()
        .map(|(name, ctrl, inputs)| scenario(name, ctrl, *inputs))
        .collect::<Result<_>>()?;
    for r in &runs {
        write_trajectory(&out.join(format!("traj_{}.csv", r.name)), &r.traj)?;
        if opts.plots {
            write_plots(out, &format!("{}_", r.name), r.name, &r.traj)?;
        }
    }
    let state = |name: &str| &runs.iter().find(|r| r.name == name).expect("scenario ran").state;

    let table: ComparisonTable = comparison_table(&plant, &design_two, &baseline, cs::HORIZON)?;
    write_atomic(&out.join("table.csv"), table.to_csv().as_bytes())?;
    write_atomic(&out.join("table.txt"), table.to_string().as_bytes())?;

    let spec = case_study_spec(opts.seed);
    let template = zero_template();
    let (first, second): (Result<TuneTrace>, Result<TuneTrace>) = rayon::join(
        || Ok(search(&spec, &plant, &template)?),
        || Ok(search(&spec, &plant, &template)?),
    );
    let (first, second) = (first?, second?);
    write_trace(&out.join("trace_design1.csv"), &first)?;

    let mut summary = Summary {
        lines: Vec::new(),
        failed: 0,
    };

    // 1
    let mut eig = eigenvalues(plant.a());
    eig.sort_by(|a, b| a.re.total_cmp(&b.re));
    let err = max_matched_distance(&eig, &[Complex64::new(0.5, 0.0), Complex64::new(1.5, 0.0)]);
    summary.record(
        "1 case-study eigenvalues",
        err <= 1e-12,
        format!("eig(A) = {{{}, {}}}", eig[0].re, eig[1].re),
    );

    // 2
    let d1_spec = &roots[0].1;
    let cl1 = build_closed_loop(&plant, &design_one)?;
    let mut notes = vec![format!("abscissa {:.4}", d1_spec.abscissa)];
    let mut ok = d1_spec.abscissa < -1.0 && (d1_spec.abscissa + 1.36).abs() <= 0.15;
    for seed in [Complex64::new(-1.36, 0.9646), Complex64::new(-2.6729, 0.0)] {
        match newton_refine(&cl1, seed, &NewtonOptions::default()) {
            Ok((root, _)) => {
                let d = (root - seed).norm();
                ok &= d <= 0.05;
                notes.push(format!("seed {seed:.4} -> {root:.4} (distance {d:.3})"));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("seed {seed:.4}: {e}"));
            }
        }
    }
    summary.record("2 design-1 spectrum", ok, notes.join("; "));

    // 3
    let base_d1 = predict_d1(&plant, &baseline)?;
    let predicted = base_d1.first_unrejected.finite().map(|v| v * 0.1);
    let rel = match (predicted.as_ref(), state("fig4_conventional").value()) {
        (Some(p), Some(s)) => (s - p).norm() / p.norm(),
        _ => f64::INFINITY,
    };
    summary.record(
        "3 design-1 d1 rejection",
        state("fig4_proposed").is_zero_within(1e-3) && rel <= 1e-3,
        format!(
            "proposed {}, conventional {} (relative gap to prediction {rel:.1e})",
            describe_steady_state(state("fig4_proposed")),
            describe_steady_state(state("fig4_conventional"))
        ),
    );

    // 4
    summary.record(
        "4 design-2 simultaneous rejection",
        state("fig7_proposed").is_zero_within(1e-3) && !state("fig7_conventional").is_zero_within(1e-3),
        format!(
            "proposed {}, conventional {}",
            describe_steady_state(state("fig7_proposed")),
            describe_steady_state(state("fig7_conventional"))
        ),
    );

    // 5
    let pred = fig8_prediction(&detuned)?;
    let report = predict(&plant, &detuned)?;
    let sim = state("fig8_detuned");
    let matches = match (pred.finite(), sim.value()) {
        (Some(p), Some(s)) => (p - s).norm() <= 1e-3 * p.norm(),
        _ => false,
    };
    summary.record(
        "5 ramp tracking",
        state("fig8_proposed").is_zero_within(1e-3)
            && !report.ramp_reference_tracked
            && sim.value().is_some()
            && !sim.is_zero_within(1e-3)
            && matches,
        format!(
            "proposed {}; K2 tau_q = -0.9 predicted {pred}, simulated {}",
            describe_steady_state(state("fig8_proposed")),
            describe_steady_state(sim)
        ),
    );

    // 6
    let cl2 = build_closed_loop(&plant, &design_two)?;
    let cubic_pred = final_error(&cl2, Channel::SensorD1, &cubic_d1())?;
    let cubic_traj = simulate(
        &cl2,
        &inputs_for(&cl2, Category::D1, cubic_d1()),
        &SimOptions::for_loop(&cl2, cs::HORIZON),
    )?;
    let cubic_sim = steady_state_error(&cubic_traj);
    let mismatched = table.cells.iter().filter(|c| !c.matches_expected()).count();
    summary.record(
        "6 comparison table",
        mismatched == 0 && table.conflicts().is_empty() && !cubic_pred.is_zero() && !cubic_sim.is_zero_within(1e-3),
        format!(
            "{} of 18 cells match, {} conflicts; cubic d1 predicted {cubic_pred}, simulated {}",
            18 - mismatched,
            table.conflicts().len(),
            describe_steady_state(&cubic_sim)
        ),
    );

    // 7
    let scalar = build_closed_loop(
        &Plant::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![0.0])?,
        &DelayedFeedbackController::new(dmatrix![-1.0], dmatrix![0.0], dmatrix![0.0], 1.0, 0.0, 1)?,
    )?;
    let scalar_roots = rightmost_roots(&scalar, 6, &SpectrumOptions::default())?;
    let pair: Vec<Complex64> = scalar_roots.values().into_iter().filter(|s| s.norm() > 1e-8).take(2).collect();
    let pair_err = max_matched_distance(&pair, &[Complex64::new(-0.3181, 1.3372), Complex64::new(-0.3181, -1.3372)]);
    let cl_base = build_closed_loop(&plant, &baseline)?;
    let dense: Vec<Complex64> = cl_base.a0().complex_eigenvalues().iter().copied().collect();
    let dense_err = max_matched_distance(&roots[2].1.values(), &dense);
    let worst_residual = roots
        .iter()
        .map(|(_, s)| s)
        .chain([&scalar_roots])
        .flat_map(|s| s.roots.iter().map(|r| r.residual))
        .fold(0.0_f64, f64::max);
    summary.record(
        "7 spectrum validation",
        pair_err <= 1e-4 && dense_err <= 1e-9 && worst_residual <= 1e-8,
        format!(
            "s + e^-s pair {:.4} (error {pair_err:.1e}), delay-free error {dense_err:.1e}, max residual {worst_residual:.1e}",
            pair.first().copied().unwrap_or_default()
        ),
    );

    // 8
    let ratio = integrator_ratio(&cl_base)?;
    summary.record(
        "8 integrator order",
        (12.0..=20.0).contains(&ratio),
        format!("step-halving error ratio {ratio:.2}"),
    );

    // 9
    let target = [1.5, -2.0, 0.7];
    let quad_spec = TuneSpec {
        max_iterations: 2000,
        threshold: f64::NEG_INFINITY,
        seed: opts.seed,
        ..TuneSpec::new(
            (0..3)
                .map(|i| FreeParam {
                    id: ParamId::K(0, i),
                    lo: -5.0,
                    hi: 5.0,
                })
                .collect(),
        )
    };
    let quad = anneal_with(&quad_spec, &[0.0; 3], |v| {
        v.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum()
    })?;
    let dist = quad
        .best_params
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    summary.record(
        "9 annealing",
        first.reached(cs::ABSCISSA_THRESHOLD) && first == second && dist < 0.1,
        format!(
            "seed {}: abscissa {:.4} after {} iterations of chain {}, rerun identical {}; quadratic distance {dist:.1e}",
            opts.seed,
            first.best_cost,
            first.records.len() - 1,
            first.chain,
            first == second
        ),
    );

    let mut text = String::new();
    let _ = writeln!(text, "{table}");
    for line in &summary.lines {
        let _ = writeln!(text, "{line}");
    }
    for c in table.conflicts() {
        let _ = writeln!(
            text,
            "CONFLICT {} {} {}: predicted {}, simulated {}",
            c.method.label(),
            c.category.label(),
            c.order.label(),
            c.predicted_error,
            describe_steady_state(&c.simulated_error)
        );
    }
    let _ = writeln!(text, "{} of 9 criteria passed", 9 - summary.failed);
    write_atomic(&out.join("summary.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(if summary.failed == 0 && table.conflicts().is_empty() {
        Status::Ok
    } else {
        Status::ChecksFailed
    })
}
