//! Lattice model: parameters, single-particle Hamiltonian, spectral
//! decomposition and the conversions between correlation matrix,
//! displacement field and order-parameter profile.
//!
//! Sites are 0-based. Bond `j` joins sites `j` and `j + 1 (mod L)` and carries
//! the hopping amplitude `J + sigma_j`; the periodic bond `L-1 -> 0` carries
//! `sigma_{L-1}`.

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};

/// Physical parameters of one point in control space. Energies in units of `J`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of sites (even, at least 4).
    #[serde(rename = "L")]
    pub l: usize,
    /// Bare hopping.
    #[serde(rename = "J", default = "one")]
    pub j: f64,
    pub mu: f64,
    pub g: f64,
    pub gamma: f64,
    #[serde(rename = "kBT")]
    pub kbt: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(l: usize, j: f64, mu: f64, g: f64, gamma: f64, kbt: f64) -> Result<Self> {
        let p = ModelParams {
            l,
            j,
            mu,
            g,
            gamma,
            kbt,
        };
        p.validate()?;
        Ok(p)
    }

    /// `L = 100, J = 1, gamma = 0.01, kBT = 0.05` at the given `(mu, g)`.
    pub fn reference(mu: f64, g: f64) -> Self {
        ModelParams {
            l: 100,
            j: 1.0,
            mu,
            g,
            gamma: 0.01,
            kbt: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.l < 4 || self.l % 2 != 0 {
            return bad(format!("L must be even and >= 4, got {}", self.l));
        }
        if !(self.j > 0.0) || !self.j.is_finite() {
            return bad(format!("J must be positive, got {}", self.j));
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return bad(format!("g must be non-negative, got {}", self.g));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.kbt > 0.0) || !self.kbt.is_finite() {
            return bad(format!("kBT must be positive, got {}", self.kbt));
        }
        Ok(())
    }

    /// Same physics with a different `(mu, g)`.
    pub fn with_point(&self, mu: f64, g: f64) -> Self {
        ModelParams { mu, g, ..*self }
    }

    pub fn point(&self) -> (f64, f64) {
        (self.mu, self.g)
    }
}

/// Real displacement field `sigma_j`, one entry per bond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField(Vec<f64>);

impl DisplacementField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma[{j}] is not finite")));
        }
        Ok(DisplacementField(values))
    }

    pub fn zeros(l: usize) -> Self {
        DisplacementField(vec![0.0; l])
    }

    pub fn uniform(l: usize, value: f64) -> Self {
        DisplacementField(vec![value; l])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Lattice translation `sigma'_j = sigma_{j + shift}`, optionally
    /// preceded by the bond reflection `j -> L - 2 - j`.
    pub fn transformed(&self, shift: usize, reflect: bool) -> Self {
        let l = self.0.len();
        let src = |j: usize| {
            let k = (j + shift) % l;
            if reflect {
                (2 * l - 2 - k) % l
            } else {
                k
            }
        };
        DisplacementField((0..l).map(|j| self.0[src(j)]).collect())
    }
}

/// Real symmetric single-particle Hamiltonian of a periodic chain:
/// `h[j][j+1] = h[j+1][j] = -(J + sigma_j)` and `h[j][j] = -mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleParticleHamiltonian {
    /// `J + sigma_j` for bond `j -> j+1`.
    pub hopping: Vec<f64>,
    pub mu: f64,
}

impl SingleParticleHamiltonian {
    pub fn len(&self) -> usize {
        self.hopping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hopping.is_empty()
    }

    pub fn dense(&self) -> Mat<f64> {
        let l = self.len();
        let mut h = Mat::<f64>::zeros(l, l);
        for j in 0..l {
            let k = (j + 1) % l;
            h[(j, j)] = -self.mu;
            h[(j, k)] = -self.hopping[j];
            h[(k, j)] = -self.hopping[j];
        }
        h
    }

    /// `h * x` exploiting the cyclic tridiagonal structure.
    pub(crate) fn apply_left(&self, x: &Mat<c64>, out: &mut Mat<c64>) {
        let l = self.len();
        let ncols = x.ncols();
        for c in 0..ncols {
            for j in 0..l {
                let prev = (j + l - 1) % l;
                let next = (j + 1) % l;
                out[(j, c)] = x[(j, c)] * (-self.mu)
                    - x[(prev, c)] * self.hopping[prev]
                    - x[(next, c)] * self.hopping[j];
            }
        }
    }

    /// `x * h` exploiting the cyclic tridiagonal structure.
    pub(crate) fn apply_right(&self, x: &Mat<c64>, out: &mut Mat<c64>) {
        let l = self.len();
        for c in 0..l {
            let prev = (c + l - 1) % l;
            let next = (c + 1) % l;
            let (bp, bn) = (self.hopping[prev], self.hopping[c]);
            for r in 0..x.nrows() {
                out[(r, c)] = x[(r, c)] * (-self.mu) - x[(r, prev)] * bp - x[(r, next)] * bn;
            }
        }
    }
}

/// Eigenvalues `eps` (ascending) and mode coefficients `u`, row `e` holding
/// `u[e][j]` such that `Gamma_e = sum_j conj(u[e][j]) c_j`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eps: Vec<f64>,
    pub u: Mat<c64>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// `h[j][j'] = sum_e eps_e conj(u[e][j]) u[e][j']`.
    pub fn reconstruct(&self) -> Mat<c64> {
        let l = self.len();
        Mat::from_fn(l, l, |j, k| {
            (0..l)
                .map(|e| self.u[(e, j)].conj() * self.u[(e, k)] * self.eps[e])
                .sum()
        })
    }

    /// Multiplies mode row `e` by `phases[e]`. All physical outputs are
    /// invariant under this.
    pub fn with_phases(&self, phases: &[f64]) -> Self {
        let mut u = self.u.clone();
        for (e, &phi) in phases.iter().enumerate() {
            let z = c64::cis(phi);
            for j in 0..u.ncols() {
                u[(e, j)] *= z;
            }
        }
        SpectralDecomposition {
            eps: self.eps.clone(),
            u,
        }
    }
}

/// Staggered split `sigma_j = delta_j + (-1)^j m_j` with `delta_j` the
/// spatial mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParameterProfile {
    #[serde(rename = "deltaJ")]
    pub delta_j: f64,
    pub m: Vec<f64>,
}

impl OrderParameterProfile {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.m
            .iter()
            .enumerate()
            .map(|(j, m)| self.delta_j + stagger(j) * m)
            .collect()
    }
}

#[inline]
pub(crate) fn stagger(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_hamiltonian(
    params: &ModelParams,
    sigma: &DisplacementField,
) -> Result<SingleParticleHamiltonian> {
    if sigma.len() != params.l {
        return Err(Error::DimensionMismatch {
            expected: params.l,
            got: sigma.len(),
        });
    }
    Ok(SingleParticleHamiltonian {
        hopping: sigma.as_slice().iter().map(|s| params.j + s).collect(),
        mu: params.mu,
    })
}

pub fn diagonalize(h: &SingleParticleHamiltonian) -> Result<SpectralDecomposition> {
    let (eps, vecs) = eigh_real(&h.dense())?;
    let l = eps.len();
    // Column e of `vecs` is the eigenvector; u stores it as row e.
    let u = Mat::from_fn(l, l, |e, j| c64::new(vecs[(j, e)], 0.0));
    Ok(SpectralDecomposition { eps, u })
}

/// Real symmetric eigendecomposition: ascending eigenvalues and eigenvectors
/// as columns.
pub(crate) fn eigh_real(h: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Eigensolver)?;
    let s = evd.S().column_vector();
    let eps: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((eps, evd.U().to_owned()))
}

/// `sigma_j = g^2 (theta[j][j+1] + theta[j+1][j]) = 2 g^2 Re theta[j][j+1]`.
pub fn self_consistent_sigma(theta: &CorrelationMatrix, g: f64) -> DisplacementField {
    let t = theta.as_mat();
    let l = t.nrows();
    let g2 = g * g;
    DisplacementField(
        (0..l)
            .map(|j| {
                let k = (j + 1) % l;
                g2 * (t[(j, k)] + t[(k, j)]).re
            })
            .collect(),
    )
}

/// Largest imaginary residue of `theta[j][j+1] + theta[j+1][j]`.
pub fn sigma_imaginary_residue(theta: &CorrelationMatrix) -> f64 {
    let t = theta.as_mat();
    let l = t.nrows();
    (0..l)
        .map(|j| {
            let k = (j + 1) % l;
            (t[(j, k)] + t[(k, j)]).im.abs()
        })
        .fold(0.0, f64::max)
}

pub fn decompose_order_parameter(sigma: &DisplacementField) -> Result<OrderParameterProfile> {
    let l = sigma.len();
    if l % 2 != 0 {
        return Err(Error::OddLattice(l));
    }
    if l == 0 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: 0,
        });
    }
    let delta_j = sigma.as_slice().iter().sum::<f64>() / l as f64;
    let m = sigma
        .as_slice()
        .iter()
        .enumerate()
        .map(|(j, s)| stagger(j) * (s - delta_j))
        .collect();
    Ok(OrderParameterProfile { delta_j, m })
}

/// Fermi function `1 / (1 + exp(eps / kBT))`, evaluated without overflow.
pub fn fermi(eps: f64, kbt: f64) -> f64 {
    let x = eps / kbt;
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: usize, mu: f64) -> ModelParams {
        ModelParams::new(l, 1.0, mu, 1.0, 0.01, 0.05).unwrap()
    }

    fn sorted_eigs(h: &SingleParticleHamiltonian) -> Vec<f64> {
        diagonalize(h).unwrap().eps
    }

    #[test]
    fn uniform_chain_dispersion() {
        let h = build_hamiltonian(&params(4, 0.0), &DisplacementField::zeros(4)).unwrap();
        let eps = sorted_eigs(&h);
        for (a, b) in eps.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-12, "{eps:?}");
        }
    }

    #[test]
    fn dispersion_matches_cosine_band() {
        let l = 10;
        let h = build_hamiltonian(&params(l, 0.0), &DisplacementField::zeros(l)).unwrap();
        let mut expect: Vec<f64> = (0..l)
            .map(|k| -2.0 * (2.0 * std::f64::consts::PI * k as f64 / l as f64).cos())
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in sorted_eigs(&h).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chemical_potential_shifts_spectrum() {
        let l = 8;
        let base = sorted_eigs(&build_hamiltonian(&params(l, 0.0), &DisplacementField::zeros(l)).unwrap());
        let shifted = sorted_eigs(&build_hamiltonian(&params(l, 0.5), &DisplacementField::zeros(l)).unwrap());
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - 0.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_sigma_renormalizes_hopping() {
        let h = build_hamiltonian(&params(4, 0.0), &DisplacementField::uniform(4, 0.1)).unwrap();
        let eps = sorted_eigs(&h);
        for (a, b) in eps.iter().zip([-2.2, 0.0, 0.0, 2.2]) {
            assert!((a - b).abs() < 1e-12, "{eps:?}");
        }
    }

    #[test]
    fn hamiltonian_sparsity_and_symmetry() {
        let l = 6;
        let sigma = DisplacementField::new(vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.2]).unwrap();
        let h = build_hamiltonian(&params(l, 0.3), &sigma).unwrap().dense();
        let mut nonzero = 0;
        for i in 0..l {
            for j in 0..l {
                assert_eq!(h[(i, j)], h[(j, i)]);
                if h[(i, j)] != 0.0 {
                    nonzero += 1;
                }
            }
        }
        assert_eq!(nonzero, 3 * l);
        // periodic bond carries sigma_{L-1}
        assert_eq!(h[(l - 1, 0)], -(1.0 + 0.2));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = build_hamiltonian(&params(4, 0.0), &DisplacementField::zeros(6)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, got: 6 }));
    }

    #[test]
    fn scalar_hamiltonian_is_degenerate() {
        // J + sigma = 0 on every bond leaves h = -mu I
        let sigma = DisplacementField::uniform(4, -1.0);
        let h = build_hamiltonian(&params(4, 0.7), &sigma).unwrap();
        let sd = diagonalize(&h).unwrap();
        assert!(sd.eps.iter().all(|e| (e + 0.7).abs() < 1e-14));
    }

    #[test]
    fn spectral_reconstruction_and_orthonormality() {
        let sigma = DisplacementField::new(vec![0.13, -0.07, 0.2, 0.01, -0.15, 0.09, 0.0, 0.11]).unwrap();
        let h = build_hamiltonian(&params(8, 0.4), &sigma).unwrap();
        let sd = diagonalize(&h).unwrap();
        assert!(sd.eps.windows(2).all(|w| w[0] <= w[1]));
        let rec = sd.reconstruct();
        let dense = h.dense();
        for i in 0..8 {
            for j in 0..8 {
                assert!((rec[(i, j)] - c64::new(dense[(i, j)], 0.0)).norm() < 1e-10);
                let dot: c64 = (0..8).map(|k| sd.u[(i, k)] * sd.u[(j, k)].conj()).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - c64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sigma_from_single_bond() {
        let mut t = Mat::<c64>::zeros(4, 4);
        t[(0, 1)] = c64::new(0.25, 0.0);
        t[(1, 0)] = c64::new(0.25, 0.0);
        let theta = CorrelationMatrix::from_mat(t).unwrap();
        let s = self_consistent_sigma(&theta, 1.0);
        assert_eq!(s.as_slice(), &[0.5, 0.0, 0.0, 0.0]);
        assert!(self_consistent_sigma(&theta, 0.0).as_slice().iter().all(|&x| x == 0.0));
        let zero = CorrelationMatrix::zeros(4);
        assert!(self_consistent_sigma(&zero, 1.3).as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn order_parameter_examples() {
        let p = decompose_order_parameter(&DisplacementField::uniform(6, 0.3)).unwrap();
        assert!((p.delta_j - 0.3).abs() < 1e-15);
        assert!(p.m.iter().all(|m| m.abs() < 1e-15));

        let alt = DisplacementField::new((0..6).map(|j| stagger(j) * 0.2).collect()).unwrap();
        let p = decompose_order_parameter(&alt).unwrap();
        assert!(p.delta_j.abs() < 1e-15);
        assert!(p.m.iter().all(|m| (m - 0.2).abs() < 1e-15));

        let p = decompose_order_parameter(&DisplacementField::new(vec![0.4, 0.0, 0.4, 0.0]).unwrap()).unwrap();
        assert!((p.delta_j - 0.2).abs() < 1e-15);
        assert!(p.m.iter().all(|m| (m - 0.2).abs() < 1e-15));
    }

    #[test]
    fn odd_ring_rejected() {
        let err = decompose_order_parameter(&DisplacementField::zeros(5)).unwrap_err();
        assert!(matches!(err, Error::OddLattice(5)));
    }

    #[test]
    fn fermi_values() {
        assert_eq!(fermi(0.0, 0.05), 0.5);
        assert_eq!(fermi(0.0, 3.0), 0.5);
        assert!((fermi(0.7, 0.05) + fermi(-0.7, 0.05) - 1.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((fermi(0.05, 0.05) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((fermi(0.05, 0.05) - 0.268941).abs() < 1e-6);
        // no overflow far from the Fermi level
        assert_eq!(fermi(1e6, 1e-3), 0.0);
        assert_eq!(fermi(-1e6, 1e-3), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(5, 1.0, 0.0, 1.0, 0.01, 0.05).is_err());
        assert!(ModelParams::new(2, 1.0, 0.0, 1.0, 0.01, 0.05).is_err());
        assert!(ModelParams::new(4, 0.0, 0.0, 1.0, 0.01, 0.05).is_err());
        assert!(ModelParams::new(4, 1.0, 0.0, -1.0, 0.01, 0.05).is_err());
        assert!(ModelParams::new(4, 1.0, 0.0, 1.0, -0.01, 0.05).is_err());
        assert!(ModelParams::new(4, 1.0, 0.0, 1.0, 0.01, 0.0).is_err());
        assert!(ModelParams::new(4, 1.0, 0.0, 1.0, 0.0, 0.05).is_ok());
    }

    #[test]
    fn translation_and_reflection() {
        let s = DisplacementField::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.transformed(1, false).as_slice(), &[1.0, 2.0, 3.0, 0.0]);
        // bond j -> L-2-j : (2,1,0,3)
        assert_eq!(s.transformed(0, true).as_slice(), &[2.0, 1.0, 0.0, 3.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn staggered_split_reconstructs(v in proptest::collection::vec(-2.0f64..2.0, 2..=20usize)) {
                let mut v = v;
                if v.len() % 2 == 1 { v.pop(); }
                let sigma = DisplacementField::new(v.clone()).unwrap();
                let p = decompose_order_parameter(&sigma).unwrap();
                for (a, b) in p.reconstruct().iter().zip(&v) {
                    prop_assert!((a - b).abs() < 1e-14);
                }
                let mean_stag: f64 = p.m.iter().enumerate().map(|(j, m)| stagger(j) * m).sum();
                prop_assert!(mean_stag.abs() < 1e-12);
            }

            #[test]
            fn spectral_reconstruction_random(v in proptest::collection::vec(-0.5f64..0.5, 10), mu in -1.0f64..1.0) {
                let p = ModelParams::new(10, 1.0, mu, 1.0, 0.01, 0.05).unwrap();
                let h = build_hamiltonian(&p, &DisplacementField::new(v).unwrap()).unwrap();
                let rec = diagonalize(&h).unwrap().reconstruct();
                let dense = h.dense();
                for i in 0..10 { for j in 0..10 {
                    prop_assert!((rec[(i, j)].re - dense[(i, j)]).abs() < 1e-10);
                    prop_assert!(rec[(i, j)].im.abs() < 1e-10);
                }}
            }

            #[test]
            fn fermi_symmetry(e in -50.0f64..50.0, t in 1e-3f64..10.0) {
                let f = fermi(e, t);
                prop_assert!((0.0..=1.0).contains(&f));
                prop_assert!((f + fermi(-e, t) - 1.0).abs() < 1e-14);
            }
        }
    }
}
