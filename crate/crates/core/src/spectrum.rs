//! Rightmost characteristic roots of a [`ClosedLoopDDE`].
//!
//! Candidates come from a Chebyshev collocation of the infinitesimal generator
//! on `[-h_max, 0]`; each candidate is then polished by Newton's method on
//! `det Δ(s) = 0` and kept only if its singular-value residual is small.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, singular_value_ratio, sort_rightmost};
use crate::model::ClosedLoopDDE;

/// Default number of roots reported by the CLI and the case-study runs.
pub const DEFAULT_ROOT_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Converged once `|step| < step_tol * max(1, |s|)`.
    pub step_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    /// Collocation order `N` (`N + 1` nodes).
    pub order: usize,
    pub residual_tol: f64,
    pub dedup_tol: f64,
    /// Refined roots must lie this close to a collocation eigenvalue, otherwise
    /// the collocation is repeated once at `2N`.
    pub agreement_tol: f64,
    /// Candidate pool size as a multiple of the requested count.
    pub candidate_factor: usize,
    pub newton: NewtonOptions,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            order: 32,
            residual_tol: 1e-8,
            dedup_tol: 1e-6,
            agreement_tol: 1e-6,
            candidate_factor: 3,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharRoot {
    pub value: Complex64,
    /// `σ_min(Δ(s)) / σ_max(Δ(s))`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// Sorted by descending real part; closed under conjugation.
    pub roots: Vec<CharRoot>,
    /// Largest real part among `roots` (`NaN` when no root was validated).
    pub abscissa: f64,
    /// Collocation order actually used (`0` on the delay-free path).
    pub discretization_order: usize,
    pub max_delay: f64,
    /// `false` when fewer roots than requested could be validated (a
    /// delay-free loop only has as many roots as states).
    pub complete: bool,
}

impl SpectrumResult {
    pub fn values(&self) -> Vec<Complex64> {
        self.roots.iter().map(|r| r.value).collect()
    }
}

/// Collocation matrix together with any resolution warnings.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub matrix: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Chebyshev–Gauss–Lobatto nodes `cos(jπ/N)` on `[-1, 1]`, `j = 0..N`.
fn cgl_nodes(order: usize) -> Vec<f64> {
    (0..=order)
        .map(|j| (std::f64::consts::PI * j as f64 / order as f64).cos())
        .collect()
}

/// Chebyshev differentiation matrix on the CGL nodes.
fn cheb_diff(nodes: &[f64]) -> DMatrix<f64> {
    let n = nodes.len() - 1;
    let c = |j: usize| {
        let base = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            base
        } else {
            -base
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (nodes[i] - nodes[j]);
            }
        }
        // negative-sum trick for the diagonal
        let row_sum: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -row_sum;
    }
    d
}

/// Barycentric Lagrange basis values at `x` for the CGL nodes.
fn barycentric_row(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len() - 1;
    if let Some(hit) = nodes.iter().position(|&xj| (x - xj).abs() < 1e-14) {
        let mut row = vec![0.0; n + 1];
        row[hit] = 1.0;
        return row;
    }
    let terms: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            let w = if j % 2 == 0 { w } else { -w };
            w / (x - xj)
        })
        .collect();
    let total: f64 = terms.iter().sum();
    terms.into_iter().map(|t| t / total).collect()
}

/// Collocation matrix of size `d(N+1)` whose eigenvalues approximate the
/// characteristic roots.
///
/// Block row 0 encodes `G'(0) = A0 G(0) + Σ coeff_k G(-h_k)` with the delayed
/// values interpolated from the nodes; block rows `1..=N` encode the spectral
/// derivative on `[-h_max, 0]`.
pub fn discretize(cl: &ClosedLoopDDE, order: usize) -> Result<Discretization> {
    if order < 4 {
        return Err(Error::InvalidParameter {
            name: "order".into(),
            reason: format!("collocation order must be >= 4, got {order}"),
        });
    }
    let h = cl.max_delay();
    if h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "delays".into(),
            reason: "closed loop has no positive delay; use the dense eigenvalue path".into(),
        });
    }
    let d = cl.dim();
    let nodes = cgl_nodes(order);
    let diff = cheb_diff(&nodes) * (2.0 / h);
    let size = d * (order + 1);
    let mut m = DMatrix::zeros(size, size);

    m.view_mut((0, 0), (d, d)).copy_from(cl.a0());
    let terms = cl.delay_terms();
    for term in &terms {
        let x = 1.0 - 2.0 * term.delay / h;
        for (j, lj) in barycentric_row(&nodes, x).into_iter().enumerate() {
            if lj != 0.0 {
                let mut block = m.view_mut((0, j * d), (d, d));
                block += &term.coeff * lj;
            }
        }
    }
    for i in 1..=order {
        for j in 0..=order {
            let v = diff[(i, j)];
            for k in 0..d {
                m[(i * d + k, j * d + k)] = v;
            }
        }
    }

    let mut warnings = Vec::new();
    let spacing = h * (1.0 - (std::f64::consts::PI / order as f64).cos()) / 2.0;
    let mut delays = cl.delays();
    delays.dedup();
    for pair in delays.windows(2) {
        if pair[1] - pair[0] < spacing {
            warnings.push(format!(
                "delays {} and {} are closer than the minimum node spacing {spacing:.3e}",
                pair[0], pair[1]
            ));
        }
    }
    Ok(Discretization { matrix: m, warnings })
}

/// Newton's method on `det Δ(s)`; returns the root and its residual.
///
/// The step `det Δ / (det Δ)'` is computed as `1 / tr(Δ^{-1} Δ')`, which equals
/// `det Δ / tr(adj(Δ) Δ')` without forming the determinant.
pub fn newton_refine(
    cl: &ClosedLoopDDE,
    s0: Complex64,
    opts: &NewtonOptions,
) -> Result<(Complex64, f64)> {
    let mut s = s0;
    for _ in 0..opts.max_iterations {
        let delta = cl.char_matrix(s);
        let Some(x) = delta.lu().solve(&cl.char_matrix_derivative(s)) else {
            // exactly singular: s is a root
            return Ok((s, 0.0));
        };
        let trace = x.trace();
        if !(trace.re.is_finite() && trace.im.is_finite()) || trace.norm() == 0.0 {
            break;
        }
        let step = trace.inv();
        s -= step;
        if !(s.re.is_finite() && s.im.is_finite()) {
            break;
        }
        if step.norm() < opts.step_tol * s.norm().max(1.0) {
            return Ok((s, singular_value_ratio(&cl.char_matrix(s))));
        }
    }
    Err(Error::NewtonDivergence {
        iterations: opts.max_iterations,
        last_re: s.re,
        last_im: s.im,
    })
}

/// Residual `σ_min(Δ(s)) / σ_max(Δ(s))`.
pub fn residual(cl: &ClosedLoopDDE, s: Complex64) -> f64 {
    singular_value_ratio(&cl.char_matrix(s))
}

fn snap_real(s: Complex64) -> Complex64 {
    if s.im.abs() <= 1e-10 * s.norm().max(1.0) {
        Complex64::new(s.re, 0.0)
    } else {
        s
    }
}

/// Refines the candidates, keeps validated ones and closes under conjugation.
fn validate(cl: &ClosedLoopDDE, candidates: &[Complex64], opts: &SpectrumOptions) -> Vec<CharRoot> {
    // conjugates are added back afterwards, so only refine the upper half-plane
    let seeds: Vec<Complex64> = candidates.iter().filter(|c| c.im >= 0.0).copied().collect();
    let refined: Vec<Option<CharRoot>> = seeds
        .par_iter()
        .map(|&seed| {
            let (root, _) = newton_refine(cl, seed, &opts.newton).ok()?;
            let root = snap_real(root);
            let root = if root.im < 0.0 { root.conj() } else { root };
            let res = residual(cl, root);
            (res <= opts.residual_tol).then_some(CharRoot {
                value: root,
                residual: res,
            })
        })
        .collect();

    let mut kept: Vec<CharRoot> = Vec::new();
    for root in refined.into_iter().flatten() {
        if kept
            .iter()
            .all(|k| (k.value - root.value).norm() >= opts.dedup_tol)
        {
            kept.push(root);
        }
    }
    let mut out = Vec::with_capacity(2 * kept.len());
    for root in kept {
        out.push(root);
        if root.value.im != 0.0 {
            out.push(CharRoot {
                value: root.value.conj(),
                residual: root.residual,
            });
        }
    }
    out.sort_by(|a, b| {
        b.value
            .re
            .total_cmp(&a.value.re)
            .then(b.value.im.total_cmp(&a.value.im))
    });
    out
}

/// Truncates to `count`, extending by one to keep a conjugate pair intact.
fn truncate_pairs(mut roots: Vec<CharRoot>, count: usize) -> Vec<CharRoot> {
    if roots.len() > count {
        let keep = if count > 0 && roots[count - 1].value.im > 0.0 {
            count + 1
        } else {
            count
        };
        roots.truncate(keep);
    }
    roots
}

fn finish(roots: Vec<CharRoot>, count: usize, available: usize, order: usize, max_delay: f64) -> SpectrumResult {
    let complete = roots.len() >= count.min(available);
    let roots = truncate_pairs(roots, count);
    let abscissa = roots.first().map_or(f64::NAN, |r| r.value.re);
    SpectrumResult {
        roots,
        abscissa,
        discretization_order: order,
        max_delay,
        complete,
    }
}

/// The `count` rightmost validated characteristic roots.
///
/// The abscissa is exact for the returned set. Treating it as the true
/// spectral abscissa assumes the collocation captured every root with real
/// part at least `abscissa - 1`.
pub fn rightmost_roots(cl: &ClosedLoopDDE, count: usize, opts: &SpectrumOptions) -> Result<SpectrumResult> {
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count".into(),
            reason: "must be >= 1".into(),
        });
    }
    if cl.is_delay_free() {
        let mut eig = eigenvalues(cl.a0());
        sort_rightmost(&mut eig);
        let roots = validate(cl, &eig, opts);
        // a delay-free loop has exactly dim roots
        return Ok(finish(roots, count, cl.dim(), 0, 0.0));
    }

    let pool = opts.candidate_factor.max(1) * count;
    let mut order = opts.order;
    let mut roots = Vec::new();
    for attempt in 0..2 {
        let disc = discretize(cl, order)?;
        let mut eig = eigenvalues(&disc.matrix);
        sort_rightmost(&mut eig);
        eig.truncate(pool);
        roots = validate(cl, &eig, opts);
        let agrees = roots.iter().take(count).all(|r| {
            eig.iter()
                .any(|e| (e - r.value).norm() < opts.agreement_tol || (e.conj() - r.value).norm() < opts.agreement_tol)
        });
        if agrees || attempt == 1 {
            break;
        }
        order *= 2;
    }
    Ok(finish(roots, count, usize::MAX, order, cl.max_delay()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::linalg::{is_conjugate_closed, max_matched_distance};
    use crate::model::{build_closed_loop, DelayedFeedbackController, Plant};
    use nalgebra::dmatrix;

    /// `x'(t) = -x(t - 1)` as a closed loop: A = -1, B = 1, K = -1, p = 1 gives
    /// `A - BK = 0` and a delayed coefficient `-BK * w_1 = -1`. With C = 0 and
    /// K1 = 0 the integral state decouples and contributes a root at 0.
    pub(crate) fn scalar_delay_loop() -> ClosedLoopDDE {
        let plant = Plant::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        let ctrl =
            DelayedFeedbackController::new(dmatrix![-1.0], dmatrix![0.0], dmatrix![0.0], 1.0, 0.0, 1)
                .unwrap();
        build_closed_loop(&plant, &ctrl).unwrap()
    }

    /// Newton on `s + e^{-s}` with the hand-derived derivative `1 - e^{-s}`.
    fn oracle_root(mut s: Complex64) -> Complex64 {
        for _ in 0..100 {
            let f = s + (-s).exp();
            let df = Complex64::new(1.0, 0.0) - (-s).exp();
            s -= f / df;
        }
        s
    }

    #[test]
    fn scalar_loop_is_s_plus_exp() {
        let cl = scalar_delay_loop();
        let s = Complex64::new(0.2, 0.7);
        let delta = cl.char_matrix(s);
        // x block is s + e^{-s}, q block is s
        assert!((delta[(0, 0)] - (s + (-s).exp())).norm() < 1e-15);
        assert!((delta[(1, 1)] - s).norm() < 1e-15);
    }

    #[test]
    fn collocation_captures_canonical_pair() {
        let cl = scalar_delay_loop();
        let disc = discretize(&cl, 32).unwrap();
        let eig = eigenvalues(&disc.matrix);
        let target = oracle_root(Complex64::new(-0.3, 1.3));
        assert!((target - Complex64::new(-0.3181, 1.3372)).norm() < 1e-4);
        let best = eig
            .iter()
            .map(|e| (e - target).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-8, "closest collocation eigenvalue off by {best}");
    }

    #[test]
    fn newton_converges_on_canonical_root() {
        let cl = scalar_delay_loop();
        let (root, res) = newton_refine(&cl, Complex64::new(-0.3, 1.3), &NewtonOptions::default()).unwrap();
        let target = oracle_root(Complex64::new(-0.3, 1.3));
        assert!((root - target).norm() < 1e-12);
        assert!((root - Complex64::new(-0.31813, 1.33724)).norm() < 1e-5);
        assert!(res < 1e-10);
    }

    #[test]
    fn newton_fixed_point_on_delay_free_eigenvalue() {
        let plant = Plant::new(dmatrix![-2.0, 1.0; 0.0, -3.0], dmatrix![0.0; 1.0], dmatrix![1.0, 0.0]).unwrap();
        let ctrl = DelayedFeedbackController::conventional(dmatrix![0.0, 0.0], dmatrix![1.0]).unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        for s0 in eigenvalues(cl.a0()) {
            let (s, _) = newton_refine(&cl, s0, &NewtonOptions::default()).unwrap();
            assert!((s - s0).norm() < 1e-12);
        }
    }

    #[test]
    fn newton_reports_divergence() {
        // det Δ(s) = s has no root near a far seed once iterations are capped at 0
        let cl = scalar_delay_loop();
        let opts = NewtonOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(matches!(
            newton_refine(&cl, Complex64::new(5.0, 5.0), &opts),
            Err(Error::NewtonDivergence { .. })
        ));
    }

    #[test]
    fn delay_free_reduction_of_collocation() {
        // A1 = A2 = 0 but a delay is declared: collocation must still reproduce eig(A0)
        let plant = case_study::plant();
        let ctrl = DelayedFeedbackController::new(dmatrix![0.0, 0.0], dmatrix![0.7], dmatrix![0.0], 0.5, 0.0, 1)
            .unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        let res = rightmost_roots(&cl, 3, &SpectrumOptions::default()).unwrap();
        let mut eig = eigenvalues(cl.a0());
        sort_rightmost(&mut eig);
        assert!(max_matched_distance(&eig, &res.values()) < 1e-9);
        assert!((res.abscissa - eig[0].re).abs() < 1e-9);
    }

    #[test]
    fn open_augmented_abscissa() {
        let plant = case_study::plant();
        let cl = build_closed_loop(&plant, &case_study::zero_gain()).unwrap();
        let res = rightmost_roots(&cl, 3, &SpectrumOptions::default()).unwrap();
        assert!((res.abscissa - 1.5).abs() < 1e-12);
        assert_eq!(res.discretization_order, 0);
    }

    #[test]
    fn results_are_sorted_and_conjugate_closed() {
        let plant = case_study::plant();
        for ctrl in [case_study::design_one(), case_study::design_two()] {
            let cl = build_closed_loop(&plant, &ctrl).unwrap();
            let res = rightmost_roots(&cl, DEFAULT_ROOT_COUNT, &SpectrumOptions::default()).unwrap();
            assert!(res.complete);
            assert!(res.roots.len() >= DEFAULT_ROOT_COUNT);
            assert!(res.roots.windows(2).all(|w| w[0].value.re >= w[1].value.re));
            assert!(is_conjugate_closed(&res.values(), 1e-12));
            assert_eq!(res.abscissa, res.roots[0].value.re);
            assert!(res.roots.iter().all(|r| r.residual <= 1e-8));
        }
    }

    #[test]
    fn collocation_converges_under_doubling() {
        let plant = case_study::plant();
        for ctrl in [case_study::design_one(), case_study::design_two()] {
            let cl = build_closed_loop(&plant, &ctrl).unwrap();
            let raw = |order| {
                let mut e = eigenvalues(&discretize(&cl, order).unwrap().matrix);
                sort_rightmost(&mut e);
                e.truncate(5);
                e
            };
            let coarse = raw(32);
            let fine = raw(64);
            let dist = max_matched_distance(&coarse, &fine);
            assert!(dist < 1e-6, "N=32 vs N=64 moved a rightmost root by {dist}");
        }
    }

    #[test]
    fn too_small_order_is_rejected() {
        let cl = scalar_delay_loop();
        assert!(discretize(&cl, 3).is_err());
    }

    #[test]
    fn close_delays_warn() {
        let plant = case_study::plant();
        let ctrl = DelayedFeedbackController::new(
            dmatrix![1.0, 0.0],
            dmatrix![1.0],
            dmatrix![-1.0],
            1.0,
            1.0 - 1e-5,
            1,
        )
        .unwrap();
        let cl = build_closed_loop(&plant, &ctrl).unwrap();
        let disc = discretize(&cl, 8).unwrap();
        assert_eq!(disc.warnings.len(), 1);
    }
}
