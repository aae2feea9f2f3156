//! Piecewise-polynomial vector signals used for references and disturbances.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One polynomial piece, active for `t >= t_start`:
/// `direction * Σ_j coeffs[j] (t - t_start)^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPiece {
    pub t_start: f64,
    pub coeffs: Vec<f64>,
    pub direction: Vec<f64>,
}

/// Sum of polynomial pieces; zero before the earliest onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    pieces: Vec<SignalPiece>,
}

impl Signal {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            pieces: Vec::new(),
        }
    }

    pub fn new(dim: usize, pieces: Vec<SignalPiece>) -> Result<Self> {
        let mut s = Self::zero(dim);
        for piece in pieces {
            s = s.with(piece)?;
        }
        Ok(s)
    }

    pub fn with(mut self, piece: SignalPiece) -> Result<Self> {
        if !(piece.t_start.is_finite() && piece.t_start >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "signal.t_start".into(),
                reason: format!("onset must be finite and >= 0, got {}", piece.t_start),
            });
        }
        if piece.direction.len() != self.dim {
            return Err(Error::InvalidParameter {
                name: "signal.direction".into(),
                reason: format!("expected length {}, got {}", self.dim, piece.direction.len()),
            });
        }
        if !piece.coeffs.iter().chain(&piece.direction).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "signal".into(),
                reason: "non-finite coefficient".into(),
            });
        }
        self.pieces.push(piece);
        Ok(self)
    }

    /// `magnitude * direction` from `t_start` on.
    pub fn step(dim: usize, t_start: f64, magnitude: f64, direction: &[f64]) -> Result<Self> {
        Self::zero(dim).with(SignalPiece {
            t_start,
            coeffs: vec![magnitude],
            direction: direction.to_vec(),
        })
    }

    /// `slope * (t - t_start) * direction`.
    pub fn ramp(dim: usize, t_start: f64, slope: f64, direction: &[f64]) -> Result<Self> {
        Self::zero(dim).with(SignalPiece {
            t_start,
            coeffs: vec![0.0, slope],
            direction: direction.to_vec(),
        })
    }

    /// `curvature * (t - t_start)^2 * direction`.
    pub fn parabola(dim: usize, t_start: f64, curvature: f64, direction: &[f64]) -> Result<Self> {
        Self::zero(dim).with(SignalPiece {
            t_start,
            coeffs: vec![0.0, 0.0, curvature],
            direction: direction.to_vec(),
        })
    }

    /// Sum of two signals of the same dimension.
    pub fn plus(mut self, other: &Signal) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::InvalidParameter {
                name: "signal".into(),
                reason: format!("cannot add signals of dimension {} and {}", self.dim, other.dim),
            });
        }
        self.pieces.extend(other.pieces.iter().cloned());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[SignalPiece] {
        &self.pieces
    }

    pub fn is_zero(&self) -> bool {
        self.pieces
            .iter()
            .all(|p| p.coeffs.iter().all(|c| *c == 0.0) || p.direction.iter().all(|d| *d == 0.0))
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.add_value_into(t, &mut out);
        out
    }

    /// Adds `value(t)` into `out` without allocating.
    pub fn add_value_into(&self, t: f64, out: &mut DVector<f64>) {
        for piece in &self.pieces {
            if t < piece.t_start {
                continue;
            }
            let dt = t - piece.t_start;
            // Horner
            let scalar = piece.coeffs.iter().rev().fold(0.0, |acc, c| acc * dt + c);
            if scalar != 0.0 {
                for (o, d) in out.iter_mut().zip(&piece.direction) {
                    *o += scalar * d;
                }
            }
        }
    }

    /// Laplace order: the largest `k` such that the transform has a `1/s^k`
    /// term (`1` for a step, `2` for a ramp, ...). `0` for the zero signal.
    pub fn laplace_order(&self) -> usize {
        self.pieces
            .iter()
            .filter(|p| p.direction.iter().any(|d| *d != 0.0))
            .filter_map(|p| p.coeffs.iter().rposition(|c| *c != 0.0))
            .map(|j| j + 1)
            .max()
            .unwrap_or(0)
    }

    /// Coefficient vectors `V_k` of `Σ_k V_k / s^k`, ignoring the onset delays
    /// (which do not change final values). Index `k - 1` holds `V_k`.
    pub fn laplace_terms(&self) -> Vec<DVector<f64>> {
        let order = self.laplace_order();
        let mut terms = vec![DVector::zeros(self.dim); order];
        for piece in &self.pieces {
            let mut factorial = 1.0;
            for (j, c) in piece.coeffs.iter().enumerate() {
                if j > 0 {
                    factorial *= j as f64;
                }
                if *c != 0.0 && j < order {
                    for (t, d) in terms[j].iter_mut().zip(&piece.direction) {
                        *t += c * factorial * d;
                    }
                }
            }
        }
        terms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_before_onset_and_for_negative_time() {
        let s = Signal::step(2, 1.0, 3.0, &[1.0, -1.0]).unwrap();
        assert_eq!(s.value(0.5), DVector::zeros(2));
        assert_eq!(s.value(-4.0), DVector::zeros(2));
        assert_eq!(s.value(1.0), DVector::from_vec(vec![3.0, -3.0]));
    }

    #[test]
    fn composite_value() {
        let s = Signal::step(1, 10.0, 0.5, &[1.0])
            .unwrap()
            .plus(&Signal::ramp(1, 25.0, 0.1, &[1.0]).unwrap())
            .unwrap();
        assert_eq!(s.value(20.0)[0], 0.5);
        assert!((s.value(35.0)[0] - 1.5).abs() < 1e-15);
        let p = Signal::parabola(1, 10.0, 0.02, &[1.0]).unwrap();
        assert!((p.value(20.0)[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_orders() {
        assert_eq!(Signal::zero(2).laplace_order(), 0);
        assert_eq!(Signal::step(1, 0.0, 1.0, &[1.0]).unwrap().laplace_order(), 1);
        assert_eq!(Signal::ramp(1, 0.0, 1.0, &[1.0]).unwrap().laplace_order(), 2);
        assert_eq!(Signal::parabola(1, 0.0, 1.0, &[1.0]).unwrap().laplace_order(), 3);
        let cubic = Signal::zero(1)
            .with(SignalPiece {
                t_start: 0.0,
                coeffs: vec![0.0, 0.0, 0.0, 1.0],
                direction: vec![1.0],
            })
            .unwrap();
        assert_eq!(cubic.laplace_order(), 4);
        // t^3 -> 6 / s^4
        assert_eq!(cubic.laplace_terms()[3][0], 6.0);
    }

    #[test]
    fn laplace_terms_of_parabola() {
        // 0.02 t^2 -> 0.04 / s^3
        let p = Signal::parabola(2, 10.0, 0.02, &[1.0, 1.0]).unwrap();
        let terms = p.laplace_terms();
        assert_eq!(terms.len(), 3);
        assert_eq!(terms[2], DVector::from_vec(vec![0.04, 0.04]));
        assert_eq!(terms[0], DVector::zeros(2));
    }

    #[test]
    fn rejects_negative_onset_and_bad_direction() {
        assert!(Signal::step(1, -1.0, 1.0, &[1.0]).is_err());
        assert!(Signal::step(2, 0.0, 1.0, &[1.0]).is_err());
    }
}
