//! The evolving state: the single-particle correlation matrix
//! `theta[j][j'] = <c_j^dag c_j'>`.

use faer::{c64, Mat, Side};

use crate::error::{Error, Result};

/// Tolerance on eigenvalue excursions outside `[0, 1]`.
pub const OCCUPATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix(Mat<c64>);

impl CorrelationMatrix {
    pub fn from_mat(m: Mat<c64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        Ok(CorrelationMatrix(m))
    }

    pub fn from_real(m: &Mat<f64>) -> Self {
        CorrelationMatrix(Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
            c64::new(m[(i, j)], 0.0)
        }))
    }

    pub fn zeros(l: usize) -> Self {
        CorrelationMatrix(Mat::zeros(l, l))
    }

    /// `c * I`.
    pub fn scaled_identity(l: usize, c: f64) -> Self {
        CorrelationMatrix(Mat::from_fn(l, l, |i, j| {
            if i == j {
                c64::new(c, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        }))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn as_mat(&self) -> &Mat<c64> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<c64> {
        self.0
    }

    pub fn trace(&self) -> c64 {
        (0..self.len()).map(|i| self.0[(i, i)]).sum()
    }

    /// Mean particle number `Re Tr theta`.
    pub fn particle_number(&self) -> f64 {
        self.trace().re
    }

    /// `max |theta - theta^dag|`.
    pub fn hermiticity_error(&self) -> f64 {
        let l = self.len();
        let mut err = 0.0f64;
        for i in 0..l {
            for j in i..l {
                err = err.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        err
    }

    /// `theta <- (theta + theta^dag) / 2`.
    pub fn hermitize(&mut self) {
        let l = self.len();
        for i in 0..l {
            self.0[(i, i)].im = 0.0;
            for j in (i + 1)..l {
                let avg = (self.0[(i, j)] + self.0[(j, i)].conj()) * 0.5;
                self.0[(i, j)] = avg;
                self.0[(j, i)] = avg.conj();
            }
        }
    }

    /// Ascending occupation numbers.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.0
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| Error::Eigensolver)
    }

    /// Checks Hermiticity and `0 <= eig <= 1` within the given tolerances.
    pub fn check_invariants(&self, herm_tol: f64, occ_tol: f64, time: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > herm_tol || !herm.is_finite() {
            return Err(Error::Invariant {
                time,
                detail: format!("hermiticity error {herm:.3e} exceeds {herm_tol:.1e}"),
            });
        }
        let ev = self.eigenvalues()?;
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo < -occ_tol || hi > 1.0 + occ_tol {
            return Err(Error::Invariant {
                time,
                detail: format!("occupations out of [0,1]: min {lo:.3e}, max {hi:.9}"),
            });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &CorrelationMatrix) -> f64 {
        let l = self.len();
        let mut d = 0.0f64;
        for j in 0..l {
            for i in 0..l {
                d = d.max((self.0[(i, j)] - other.0[(i, j)]).norm());
            }
        }
        d
    }

    /// Site relabelling matching [`crate::model::DisplacementField::transformed`]:
    /// site `a` takes the content of `a + shift` (then reflected `k -> L-1-k`).
    pub fn transformed(&self, shift: usize, reflect: bool) -> Self {
        let l = self.len();
        let src = |a: usize| {
            let k = (a + shift) % l;
            if reflect {
                l - 1 - k
            } else {
                k
            }
        };
        CorrelationMatrix(Mat::from_fn(l, l, |a, b| self.0[(src(a), src(b))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitize_removes_antihermitian_part() {
        let mut m = Mat::<c64>::zeros(3, 3);
        m[(0, 1)] = c64::new(1.0, 0.5);
        m[(1, 0)] = c64::new(0.8, -0.3);
        m[(2, 2)] = c64::new(0.4, 0.1);
        let mut t = CorrelationMatrix::from_mat(m).unwrap();
        assert!(t.hermiticity_error() > 0.1);
        t.hermitize();
        assert_eq!(t.hermiticity_error(), 0.0);
        assert_eq!(t.as_mat()[(0, 1)], c64::new(0.9, 0.4));
    }

    #[test]
    fn invariant_check_flags_overfilled_mode() {
        let t = CorrelationMatrix::scaled_identity(4, 1.0 + 1e-3);
        assert!(t.check_invariants(1e-8, OCCUPATION_TOL, 0.0).is_err());
        let t = CorrelationMatrix::scaled_identity(4, 0.5);
        assert!(t.check_invariants(1e-8, OCCUPATION_TOL, 0.0).is_ok());
        assert!((t.particle_number() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_square_rejected() {
        assert!(CorrelationMatrix::from_mat(Mat::zeros(3, 4)).is_err());
    }
}
