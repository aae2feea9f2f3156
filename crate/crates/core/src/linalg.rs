//! Small dense helpers shared by the spectrum, analysis and tuning code.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Smallest over largest singular value; `0` for an exactly singular matrix.
pub fn singular_value_ratio(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    min / max
}

/// Eigenvalues of a real square matrix, via real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Sort descending by real part, ties broken by descending imaginary part.
pub fn sort_rightmost(values: &mut [Complex64]) {
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Monic characteristic polynomial coefficients `[c_0, ..., c_{k-1}, 1]` of the
/// given roots (ascending powers). The imaginary parts are dropped, so the
/// root set must be closed under conjugation.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &root in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * root;
        }
        coeffs = next;
    }
    coeffs.into_iter().map(|c| c.re).collect()
}

/// Whether the multiset is closed under conjugation to within `tol`.
pub fn is_conjugate_closed(values: &[Complex64], tol: f64) -> bool {
    let mut used = vec![false; values.len()];
    for i in 0..values.len() {
        if used[i] {
            continue;
        }
        if values[i].im.abs() <= tol {
            used[i] = true;
            continue;
        }
        let target = values[i].conj();
        let partner = (0..values.len())
            .filter(|&j| j != i && !used[j])
            .find(|&j| (values[j] - target).norm() <= tol);
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return false,
        }
    }
    true
}

/// Matches two root sets greedily and returns the largest pairwise distance.
pub fn max_matched_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut remaining: Vec<Complex64> = b.to_vec();
    let mut worst = 0.0_f64;
    for x in a {
        let Some((idx, dist)) = remaining
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|l, r| l.1.total_cmp(&r.1))
        else {
            return f64::INFINITY;
        };
        worst = worst.max(dist);
        remaining.swap_remove(idx);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn poly_of_double_root() {
        let c = poly_from_roots(&[Complex64::new(-1.0, 0.0), Complex64::new(-1.0, 0.0)]);
        assert_eq!(c, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn poly_of_conjugate_pair() {
        let c = poly_from_roots(&[Complex64::new(-1.0, 2.0), Complex64::new(-1.0, -2.0)]);
        // s^2 + 2s + 5
        assert!((c[0] - 5.0).abs() < 1e-15 && (c[1] - 2.0).abs() < 1e-15 && c[2] == 1.0);
    }

    #[test]
    fn ratio_of_singular_matrix_is_zero() {
        let m = dmatrix![1.0, 2.0; 2.0, 4.0].map(|v| Complex64::new(v, 0.0));
        assert!(singular_value_ratio(&m) < 1e-15);
        let id = DMatrix::<Complex64>::identity(3, 3);
        assert!((singular_value_ratio(&id) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conjugate_closure_detection() {
        let z = Complex64::new(1.0, 2.0);
        assert!(is_conjugate_closed(&[z, Complex64::new(3.0, 0.0), z.conj()], 1e-12));
        assert!(!is_conjugate_closed(&[z, Complex64::new(3.0, 0.0)], 1e-12));
    }
}
