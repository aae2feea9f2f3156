//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use delayfb_core::simulator::{Inputs, SimOptions};
use delayfb_core::spectrum::{SpectrumOptions, DEFAULT_ROOT_COUNT};
use delayfb_core::tuner::{Coupling, FreeParam, ParamId, Schedule, TuneSpec};
use delayfb_core::{ClosedLoopDDE, DelayedFeedbackController, Plant, Signal, SignalPiece};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<SignalsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(rename = "K")]
    pub k: Matrix,
    #[serde(rename = "K1")]
    pub k1: Matrix,
    /// Defaults to zeros.
    #[serde(rename = "K2", default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Matrix>,
    pub tau: f64,
    #[serde(default)]
    pub tau_q: f64,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub t_start: f64,
    pub coeffs: Vec<f64>,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsConfig {
    #[serde(default)]
    pub reference: Vec<PieceConfig>,
    #[serde(default)]
    pub d1: Vec<PieceConfig>,
    #[serde(default)]
    pub d2: Vec<PieceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

fn default_horizon() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_count() -> usize {
    DEFAULT_ROOT_COUNT
}

fn default_order() -> usize {
    SpectrumOptions::default().order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeConfig {
    pub name: String,
    /// `[lo, hi]`; defaults depend on the parameter kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingConfig {
    K2InverseTauQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub free: Vec<FreeConfig>,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
}

pub fn matrix(field: &str, rows: &Matrix) -> Result<DMatrix<f64>> {
    let Some(first) = rows.first() else {
        bail!("{field}: matrix has no rows");
    };
    let cols = first.len();
    if cols == 0 {
        bail!("{field}: matrix has no columns");
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            bail!("{field}: row {i} has {} entries, expected {cols}", row.len());
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn signal(field: &str, dim: usize, pieces: &[PieceConfig]) -> Result<Signal> {
    let pieces = pieces
        .iter()
        .map(|p| SignalPiece {
            t_start: p.t_start,
            coeffs: p.coeffs.clone(),
            direction: p.direction.clone(),
        })
        .collect();
    Signal::new(dim, pieces).with_context(|| format!("signals.{field}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Parses and cross-validates every section present.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        if self.controller.is_some() {
            let ctrl = self.controller_for(&plant)?;
            delayfb_core::build_closed_loop(&plant, &ctrl).context("controller")?;
        }
        if self.signals.is_some() {
            self.signals_for(&plant)?;
        }
        if let Some(sim) = &self.sim {
            if !(sim.horizon > 0.0 && sim.horizon.is_finite()) {
                bail!("sim.horizon: must be positive, got {}", sim.horizon);
            }
            if let Some(step) = sim.step {
                if !(step > 0.0 && step.is_finite()) {
                    bail!("sim.step: must be positive, got {step}");
                }
            }
        }
        if let Some(s) = &self.spectrum {
            if s.count == 0 {
                bail!("spectrum.count: must be at least 1");
            }
        }
        if self.tune.is_some() {
            if self.controller.is_none() {
                bail!("tune: needs a controller section as the starting point");
            }
            self.tune_spec()?;
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<Plant> {
        let a = matrix("plant.A", &self.plant.a)?;
        let b = matrix("plant.B", &self.plant.b)?;
        let c = matrix("plant.C", &self.plant.c)?;
        Plant::new(a, b, c).context("plant")
    }

    pub fn controller_for(&self, plant: &Plant) -> Result<DelayedFeedbackController> {
        let Some(c) = &self.controller else {
            bail!("controller: section missing");
        };
        let k = matrix("controller.K", &c.k)?;
        let k1 = matrix("controller.K1", &c.k1)?;
        let k2 = match &c.k2 {
            Some(rows) => matrix("controller.K2", rows)?,
            None => DMatrix::zeros(plant.m(), plant.m()),
        };
        DelayedFeedbackController::new(k, k1, k2, c.tau, c.tau_q, c.p).context("controller")
    }

    pub fn signals_for(&self, plant: &Plant) -> Result<(Signal, Signal, Signal)> {
        let s = self.signals.clone().unwrap_or_default();
        Ok((
            signal("reference", plant.m(), &s.reference)?,
            signal("d1", plant.n(), &s.d1)?,
            signal("d2", plant.n(), &s.d2)?,
        ))
    }

    pub fn inputs(&self, plant: &Plant) -> Result<Inputs> {
        let (reference, d1, d2) = self.signals_for(plant)?;
        Ok(Inputs::new(reference, d1, d2))
    }

    pub fn sim_options(&self, cl: &ClosedLoopDDE) -> SimOptions {
        let horizon = self.sim.as_ref().map_or_else(default_horizon, |s| s.horizon);
        let mut opts = SimOptions::for_loop(cl, horizon);
        if let Some(step) = self.sim.as_ref().and_then(|s| s.step) {
            opts.step = step;
        }
        opts
    }

    pub fn spectrum_options(&self) -> (usize, SpectrumOptions) {
        let mut opts = SpectrumOptions::default();
        let count = match &self.spectrum {
            Some(s) => {
                opts.order = s.order;
                s.count
            }
            None => DEFAULT_ROOT_COUNT,
        };
        (count, opts)
    }

    pub fn tune_spec(&self) -> Result<TuneSpec> {
        let Some(t) = &self.tune else {
            bail!("tune: section missing");
        };
        let mut free = Vec::with_capacity(t.free.len());
        for f in &t.free {
            let id: ParamId = f.name.parse().context("tune.free")?;
            let mut param = FreeParam::with_default_bounds(id);
            if let Some([lo, hi]) = f.bounds {
                param.lo = lo;
                param.hi = hi;
            }
            free.push(param);
        }
        let mut spec = TuneSpec::new(free);
        spec.couplings = t
            .couplings
            .iter()
            .map(|c| match c {
                CouplingConfig::K2InverseTauQ => Coupling::K2InverseTauQ,
            })
            .collect();
        let defaults = Schedule::default();
        spec.schedule = Schedule {
            t0: t.t0.unwrap_or(defaults.t0),
            gamma: t.gamma.unwrap_or(defaults.gamma),
        };
        if let Some(v) = t.threshold {
            spec.threshold = v;
        }
        if let Some(v) = t.max_iterations {
            spec.max_iterations = v;
        }
        if let Some(v) = t.seed {
            spec.seed = v;
        }
        if let Some(v) = t.step_fraction {
            spec.step_fraction = v;
        }
        if let Some(v) = t.restarts {
            spec.restarts = v;
        }
        spec.validate().context("tune")?;
        Ok(spec)
    }

    pub fn plots(&self) -> bool {
        self.output.as_ref().is_some_and(|o| o.plots)
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().and_then(|o| o.directory.clone())
    }

    /// This config with the controller section replaced by `ctrl`.
    pub fn with_controller(&self, ctrl: &DelayedFeedbackController) -> Self {
        let mut out = self.clone();
        out.controller = Some(ControllerConfig {
            k: to_rows(ctrl.k()),
            k1: to_rows(ctrl.k1()),
            k2: Some(to_rows(ctrl.k2())),
            tau: ctrl.tau(),
            tau_q: ctrl.tau_q(),
            p: ctrl.p(),
        });
        out
    }
}
