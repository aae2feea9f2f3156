//! Plant, controller and the assembled delayed closed loop.
//!
//! The closed loop stacks the plant state `x` and the integral state `q` into
//! `G = [x; q]` and reads
//!
//! ```text
//! G'(t) = A0 G(t) + A1 Σ_{i=1..p} w_i G(t - iτ) + A2 G(t - τ_q) + T r(t)
//! ```
//!
//! with `w_i = (-1)^i binom(p, i)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};

/// Open-loop LTI plant `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dim_err("A", (n.max(1), n.max(1)), a.shape()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err("B", (n, b.ncols().max(1)), b.shape()));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(dim_err("C", (c.nrows().max(1), n), c.shape()));
        }
        let finite = a.iter().chain(b.iter()).chain(c.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter {
                name: "plant".into(),
                reason: "non-finite matrix entry".into(),
            });
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn r(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }
}

/// Parameters of the binomial delayed-feedback law
///
/// ```text
/// u(t) = -( K Σ_{i=0..p} w_i x(t - iτ) + K1 q(t) )
/// q'(t) = C x(t) - r(t) - K2 (q(t) - q(t - τ_q))
/// ```
///
/// `p = 0` is plain state feedback with integral action. When `tau_q == 0` the
/// `K2` term vanishes identically; `K2` is kept but treated as inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedFeedbackController {
    k: DMatrix<f64>,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    tau: f64,
    tau_q: f64,
    p: usize,
}

impl DelayedFeedbackController {
    pub fn new(
        k: DMatrix<f64>,
        k1: DMatrix<f64>,
        k2: DMatrix<f64>,
        tau: f64,
        tau_q: f64,
        p: usize,
    ) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau".into(),
                reason: format!("must be finite and > 0, got {tau}"),
            });
        }
        if !(tau_q.is_finite() && tau_q >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau_q".into(),
                reason: format!("must be finite and >= 0, got {tau_q}"),
            });
        }
        if k2.nrows() != k2.ncols() {
            return Err(dim_err("K2", (k2.nrows(), k2.nrows()), k2.shape()));
        }
        if k.nrows() != k1.nrows() {
            return Err(dim_err("K1", (k.nrows(), k1.ncols()), k1.shape()));
        }
        if k1.ncols() != k2.nrows() {
            return Err(dim_err("K2", (k1.ncols(), k1.ncols()), k2.shape()));
        }
        let finite = k.iter().chain(k1.iter()).chain(k2.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter {
                name: "controller".into(),
                reason: "non-finite gain entry".into(),
            });
        }
        Ok(Self {
            k,
            k1,
            k2,
            tau,
            tau_q,
            p,
        })
    }

    /// Conventional state feedback with integral action, `u = -(K' x + K'' q)`.
    ///
    /// Represented as `p = 0`, `tau_q = 0`; the nominal `tau` is never used.
    pub fn conventional(k: DMatrix<f64>, k1: DMatrix<f64>) -> Result<Self> {
        let m = k1.ncols();
        Self::new(k, k1, DMatrix::zeros(m, m), 1.0, 0.0, 0)
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    /// Stored `K2`, regardless of whether it is active.
    pub fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    /// `K2` as it enters the dynamics: zero when `tau_q == 0`.
    pub fn k2_active(&self) -> DMatrix<f64> {
        if self.tau_q > 0.0 {
            self.k2.clone()
        } else {
            DMatrix::zeros(self.k2.nrows(), self.k2.ncols())
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_q(&self) -> f64 {
        self.tau_q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn weights(&self) -> Vec<i64> {
        binomial_weights(self.p)
    }

    fn check_against(&self, plant: &Plant) -> Result<()> {
        let (n, r, m) = (plant.n(), plant.r(), plant.m());
        if self.k.shape() != (r, n) {
            return Err(dim_err("K", (r, n), self.k.shape()));
        }
        if self.k1.shape() != (r, m) {
            return Err(dim_err("K1", (r, m), self.k1.shape()));
        }
        if self.k2.shape() != (m, m) {
            return Err(dim_err("K2", (m, m), self.k2.shape()));
        }
        Ok(())
    }
}

/// `[w_0, ..., w_p]` with `w_i = (-1)^i binom(p, i)`.
pub fn binomial_weights(p: usize) -> Vec<i64> {
    let mut weights = Vec::with_capacity(p + 1);
    let mut c: i64 = 1;
    for i in 0..=p {
        weights.push(if i % 2 == 0 { c } else { -c });
        // binom(p, i+1) = binom(p, i) * (p - i) / (i + 1)
        c = c * (p - i) as i64 / (i as i64 + 1);
    }
    weights
}

/// Integral-state augmentation: `A_aug = [[A, 0], [C, 0]]`, `B_aug = [[B], [0]]`.
pub fn build_augmented(plant: &Plant) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, r, m) = (plant.n(), plant.r(), plant.m());
    let mut a_aug = DMatrix::zeros(n + m, n + m);
    a_aug.view_mut((0, 0), (n, n)).copy_from(plant.a());
    a_aug.view_mut((n, 0), (m, n)).copy_from(plant.c());
    let mut b_aug = DMatrix::zeros(n + m, r);
    b_aug.view_mut((0, 0), (n, r)).copy_from(plant.b());
    (a_aug, b_aug)
}

/// One delayed coefficient of the closed loop: `coeff * G(t - delay)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTerm {
    pub delay: f64,
    pub coeff: DMatrix<f64>,
}

/// The assembled closed-loop delay system.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopDDE {
    a0: DMatrix<f64>,
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    t: DMatrix<f64>,
    weights: Vec<i64>,
    tau: f64,
    tau_q: f64,
    n: usize,
    m: usize,
    plant: Plant,
    ctrl: DelayedFeedbackController,
}

pub fn build_closed_loop(plant: &Plant, ctrl: &DelayedFeedbackController) -> Result<ClosedLoopDDE> {
    ctrl.check_against(plant)?;
    let (n, m) = (plant.n(), plant.m());
    let d = n + m;
    let bk = plant.b() * ctrl.k();
    let bk1 = plant.b() * ctrl.k1();
    let k2 = ctrl.k2_active();

    let mut a0 = DMatrix::zeros(d, d);
    a0.view_mut((0, 0), (n, n)).copy_from(&(plant.a() - &bk));
    a0.view_mut((0, n), (n, m)).copy_from(&(-&bk1));
    a0.view_mut((n, 0), (m, n)).copy_from(plant.c());
    a0.view_mut((n, n), (m, m)).copy_from(&(-&k2));

    let mut a1 = DMatrix::zeros(d, d);
    a1.view_mut((0, 0), (n, n)).copy_from(&(-&bk));

    let mut a2 = DMatrix::zeros(d, d);
    a2.view_mut((n, n), (m, m)).copy_from(&k2);

    let mut t = DMatrix::zeros(d, m);
    t.view_mut((n, 0), (m, m)).copy_from(&(-DMatrix::<f64>::identity(m, m)));

    Ok(ClosedLoopDDE {
        a0,
        a1,
        a2,
        t,
        weights: ctrl.weights(),
        tau: ctrl.tau(),
        tau_q: ctrl.tau_q(),
        n,
        m,
        plant: plant.clone(),
        ctrl: ctrl.clone(),
    })
}

impl ClosedLoopDDE {
    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn a1(&self) -> &DMatrix<f64> {
        &self.a1
    }

    pub fn a2(&self) -> &DMatrix<f64> {
        &self.a2
    }

    /// Reference injection `[0; -I]`.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_q(&self) -> f64 {
        self.tau_q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Dimension of the stacked state `[x; q]`.
    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn controller(&self) -> &DelayedFeedbackController {
        &self.ctrl
    }

    pub fn p(&self) -> usize {
        self.weights.len() - 1
    }

    /// Whether the integral-path delay `tau_q` participates.
    pub fn integral_delay_active(&self) -> bool {
        self.tau_q > 0.0
    }

    /// The delay set `{iτ : i = 1..p} ∪ {τ_q if τ_q > 0}`, ascending.
    pub fn delays(&self) -> Vec<f64> {
        let mut out: Vec<f64> = (1..=self.p()).map(|i| i as f64 * self.tau).collect();
        if self.integral_delay_active() {
            out.push(self.tau_q);
        }
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn max_delay(&self) -> f64 {
        self.delays().last().copied().unwrap_or(0.0)
    }

    pub fn is_delay_free(&self) -> bool {
        self.delays().is_empty()
    }

    /// Delayed terms with their weights folded into the coefficients.
    pub fn delay_terms(&self) -> Vec<DelayTerm> {
        let mut terms: Vec<DelayTerm> = (1..=self.p())
            .map(|i| DelayTerm {
                delay: i as f64 * self.tau,
                coeff: &self.a1 * self.weights[i] as f64,
            })
            .collect();
        if self.integral_delay_active() {
            terms.push(DelayTerm {
                delay: self.tau_q,
                coeff: self.a2.clone(),
            });
        }
        terms
    }

    /// Characteristic matrix
    /// `Δ(s) = sI - A0 - A1 Σ_{i=1..p} w_i e^{-siτ} - A2 e^{-sτ_q}`.
    pub fn char_matrix(&self, s: Complex64) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut delta = DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a0[(i, j)]
        });
        let sum: Complex64 = (1..=self.p())
            .map(|i| self.weights[i] as f64 * (-s * (i as f64 * self.tau)).exp())
            .sum();
        let eq = if self.integral_delay_active() {
            (-s * self.tau_q).exp()
        } else {
            Complex64::new(0.0, 0.0)
        };
        for i in 0..d {
            for j in 0..d {
                delta[(i, j)] -= self.a1[(i, j)] * sum + self.a2[(i, j)] * eq;
            }
        }
        delta
    }

    /// `Δ'(s) = I + A1 Σ_{i=1..p} w_i iτ e^{-siτ} + A2 τ_q e^{-sτ_q}`.
    pub fn char_matrix_derivative(&self, s: Complex64) -> DMatrix<Complex64> {
        let d = self.dim();
        let sum: Complex64 = (1..=self.p())
            .map(|i| {
                let h = i as f64 * self.tau;
                self.weights[i] as f64 * h * (-s * h).exp()
            })
            .sum();
        let eq = if self.integral_delay_active() {
            self.tau_q * (-s * self.tau_q).exp()
        } else {
            Complex64::new(0.0, 0.0)
        };
        DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j { 1.0 } else { 0.0 };
            Complex64::new(diag, 0.0) + self.a1[(i, j)] * sum + self.a2[(i, j)] * eq
        })
    }
}
