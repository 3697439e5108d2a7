//! Initial correlation matrices: randomly stirred half-filled states for
//! phase-diagram runs and self-consistent thermal steady states used as
//! pre-quench states.

use faer::{c64, Mat, Side};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionConfig, Observers};
use crate::model::{
    build_hamiltonian, eigh_real, fermi, self_consistent_sigma, DisplacementField, ModelParams,
    SingleParticleHamiltonian, SpectralDecomposition,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomInitSpec {
    /// Strength of the unitary stir `U = exp(i epsilon A)`.
    pub epsilon: f64,
    pub seed: u64,
    pub filling: f64,
}

impl Default for RandomInitSpec {
    fn default() -> Self {
        RandomInitSpec {
            epsilon: 0.05,
            seed: 1,
            filling: 0.5,
        }
    }
}

impl RandomInitSpec {
    pub fn with_seed(seed: u64) -> Self {
        RandomInitSpec {
            seed,
            ..Default::default()
        }
    }
}

/// `theta(0) = U^dag D U` with `D` a random 0/1 diagonal at the requested
/// filling and `U = exp(i epsilon A)` for a random Hermitian `A` of unit
/// spectral radius.
pub fn random_half_filled_theta(l: usize, spec: &RandomInitSpec) -> Result<CorrelationMatrix> {
    if l % 2 != 0 {
        return Err(Error::OddLattice(l));
    }
    if !(spec.epsilon >= 0.0 && spec.epsilon < 0.5) {
        return Err(Error::InvalidParams(format!(
            "epsilon must lie in [0, 0.5), got {}",
            spec.epsilon
        )));
    }
    if !(spec.filling > 0.0 && spec.filling < 1.0) {
        return Err(Error::InvalidParams(format!(
            "filling must lie in (0, 1), got {}",
            spec.filling
        )));
    }
    let n_float = spec.filling * l as f64;
    let n = n_float.round();
    if (n - n_float).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "L * filling = {n_float} is not an integer"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occ: Vec<f64> = (0..l).map(|i| if i < n as usize { 1.0 } else { 0.0 }).collect();
    occ.shuffle(&mut rng);

    if spec.epsilon == 0.0 {
        return Ok(CorrelationMatrix::from_mat(Mat::from_fn(l, l, |i, j| {
            c64::new(if i == j { occ[i] } else { 0.0 }, 0.0)
        }))?);
    }

    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut a = Mat::<c64>::zeros(l, l);
    for i in 0..l {
        a[(i, i)] = c64::new(normal(), 0.0);
        for j in (i + 1)..l {
            let z = c64::new(normal(), normal());
            a[(i, j)] = z;
            a[(j, i)] = z.conj();
        }
    }
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::Eigensolver)?;
    let lam = evd.S().column_vector();
    let w = evd.U();
    let scale = (0..l).map(|k| lam[k].re.abs()).fold(0.0, f64::max);
    // U = W diag(exp(i eps lam / scale)) W^dag
    let phase_w = Mat::<c64>::from_fn(l, l, |i, k| w[(i, k)] * c64::cis(spec.epsilon * lam[k].re / scale));
    let u = &phase_w * w.adjoint();
    // theta = U^dag D U
    let du = Mat::<c64>::from_fn(l, l, |i, j| u[(i, j)] * occ[i]);
    let mut theta = CorrelationMatrix::from_mat(u.adjoint() * &du)?;
    theta.hermitize();
    Ok(theta)
}

/// `theta_th[j][j'] = sum_e f(eps_e) conj(u[e][j]) u[e][j']`.
pub fn thermal_theta_at_fixed_h(spectral: &SpectralDecomposition, kbt: f64) -> CorrelationMatrix {
    let l = spectral.len();
    let u = &spectral.u;
    let fu = Mat::<c64>::from_fn(l, l, |e, j| u[(e, j)] * fermi(spectral.eps[e], kbt));
    let mut theta = CorrelationMatrix::from_mat(u.adjoint() * &fu).expect("square");
    theta.hermitize();
    theta
}

/// Real-arithmetic thermal matrix `V f(eps) V^T` together with the
/// eigenpairs it was built from. Columns of the returned matrix are
/// eigenvectors.
pub(crate) struct RealThermal {
    pub eps: Vec<f64>,
    pub vecs: Mat<f64>,
    pub theta: Mat<f64>,
}

pub(crate) fn thermal_real(h: &SingleParticleHamiltonian, kbt: f64) -> Result<RealThermal> {
    let (eps, vecs) = eigh_real(&h.dense())?;
    let l = eps.len();
    let f: Vec<f64> = eps.iter().map(|&e| fermi(e, kbt)).collect();
    let scaled = Mat::<f64>::from_fn(l, l, |j, e| vecs[(j, e)] * f[e]);
    let theta = &scaled * vecs.transpose();
    Ok(RealThermal { eps, vecs, theta })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    Dynamics,
    FixedPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SteadyStrategy {
    /// Evolve a stirred random state until the displacement field stops
    /// moving.
    Dynamics {
        #[serde(default)]
        evolution: EvolutionConfig,
        #[serde(default)]
        init: RandomInitSpec,
    },
    /// Iterate `theta <- theta_th(h(sigma))` with linear mixing of `sigma`.
    FixedPoint {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_fp_tol")]
        tol: f64,
        #[serde(default = "default_fp_iter")]
        max_iter: usize,
        #[serde(default)]
        init: RandomInitSpec,
    },
}

fn default_alpha() -> f64 {
    0.3
}
fn default_fp_tol() -> f64 {
    1e-8
}
fn default_fp_iter() -> usize {
    20_000
}

impl SteadyStrategy {
    pub fn dynamics(evolution: EvolutionConfig) -> Self {
        SteadyStrategy::Dynamics {
            evolution,
            init: RandomInitSpec::default(),
        }
    }

    pub fn fixed_point() -> Self {
        SteadyStrategy::FixedPoint {
            alpha: default_alpha(),
            tol: default_fp_tol(),
            max_iter: default_fp_iter(),
            init: RandomInitSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub theta: CorrelationMatrix,
    pub sigma: DisplacementField,
    pub converged: bool,
    /// Evolution time (dynamics) or iteration count (fixed point).
    pub effort: f64,
    pub method: SteadyMethod,
    pub seed: u64,
}

pub fn solve_steady_state(
    params: &ModelParams,
    strategy: &SteadyStrategy,
    seed: u64,
) -> Result<SteadyStateResult> {
    params.validate()?;
    match strategy {
        SteadyStrategy::Dynamics { evolution, init } => {
            if params.gamma <= 0.0 {
                return Err(Error::InvalidParams(
                    "the dynamics strategy needs gamma > 0".into(),
                ));
            }
            let spec = RandomInitSpec { seed, ..*init };
            let theta0 = random_half_filled_theta(params.l, &spec)?;
            let cfg = EvolutionConfig {
                stop_at_steady: true,
                ..evolution.clone()
            };
            let rec = evolve(&theta0, params, &cfg, &Observers::default())?;
            let sigma = self_consistent_sigma(&rec.final_theta, params.g);
            Ok(SteadyStateResult {
                theta: rec.final_theta,
                sigma,
                converged: rec.steady,
                effort: rec.final_time,
                method: SteadyMethod::Dynamics,
                seed,
            })
        }
        SteadyStrategy::FixedPoint {
            alpha,
            tol,
            max_iter,
            init,
        } => {
            let spec = RandomInitSpec { seed, ..*init };
            let theta0 = random_half_filled_theta(params.l, &spec)?;
            let mut sigma = self_consistent_sigma(&theta0, params.g).into_vec();
            let mut theta = theta0;
            let mut converged = false;
            let mut iters = 0;
            while iters < *max_iter {
                iters += 1;
                let h = build_hamiltonian(params, &DisplacementField::new(sigma.clone())?)?;
                theta = CorrelationMatrix::from_real(&thermal_real(&h, params.kbt)?.theta);
                let new = self_consistent_sigma(&theta, params.g).into_vec();
                let delta = new
                    .iter()
                    .zip(&sigma)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if delta < *tol {
                    converged = true;
                    break;
                }
                for (s, n) in sigma.iter_mut().zip(&new) {
                    *s = (1.0 - alpha) * *s + alpha * n;
                }
            }
            let sigma = self_consistent_sigma(&theta, params.g);
            Ok(SteadyStateResult {
                theta,
                sigma,
                converged,
                effort: iters as f64,
                method: SteadyMethod::FixedPoint,
                seed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::diagonalize;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn zero_stir_returns_diagonal() {
        let spec = RandomInitSpec {
            epsilon: 0.0,
            seed: 9,
            filling: 0.5,
        };
        let t = random_half_filled_theta(8, &spec).unwrap();
        let m = t.as_mat();
        let mut ones = 0;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_eq!(m[(i, j)], c64::new(0.0, 0.0));
                } else {
                    assert!(m[(i, i)] == c64::new(1.0, 0.0) || m[(i, i)] == c64::new(0.0, 0.0));
                    ones += (m[(i, i)].re == 1.0) as usize;
                }
            }
        }
        assert_eq!(ones, 4);
    }

    #[test]
    fn stirred_state_keeps_spectrum_and_trace() {
        for seed in 0..5 {
            let t = random_half_filled_theta(4, &RandomInitSpec::with_seed(seed)).unwrap();
            let ev = t.eigenvalues().unwrap();
            for (a, b) in ev.iter().zip([0.0, 0.0, 1.0, 1.0]) {
                assert!((a - b).abs() < 1e-10, "{ev:?}");
            }
            assert!((t.particle_number() - 2.0).abs() < 1e-10);
            assert!(t.trace().im.abs() < 1e-12);
        }
        let t = random_half_filled_theta(20, &RandomInitSpec::with_seed(3)).unwrap();
        assert!((t.particle_number() - 10.0).abs() < 1e-10);
        // the stir must actually move the state off the site basis
        let off: f64 = (0..20).map(|j| t.as_mat()[(j, (j + 1) % 20)].norm()).sum();
        assert!(off > 1e-3);
    }

    #[test]
    fn fractional_particle_number_rejected() {
        let spec = RandomInitSpec {
            filling: 0.3,
            ..Default::default()
        };
        assert!(random_half_filled_theta(4, &spec).is_err());
        assert!(random_half_filled_theta(5, &RandomInitSpec::default()).is_err());
    }

    fn bare_chain(l: usize, mu: f64) -> SpectralDecomposition {
        let p = ModelParams::new(l, 1.0, mu, 0.0, 0.01, 0.05).unwrap();
        diagonalize(&build_hamiltonian(&p, &DisplacementField::zeros(l)).unwrap()).unwrap()
    }

    #[test]
    fn thermal_limits() {
        let sd = bare_chain(6, 0.0);
        let hot = thermal_theta_at_fixed_h(&sd, 1e9);
        assert!(hot.max_abs_diff(&CorrelationMatrix::scaled_identity(6, 0.5)) < 1e-6);
        // all levels below zero: mu = 3 pushes the band to [-5, -1]
        let sd = bare_chain(6, 3.0);
        let cold = thermal_theta_at_fixed_h(&sd, 1e-3);
        assert!(cold.max_abs_diff(&CorrelationMatrix::scaled_identity(6, 1.0)) < 1e-6);
    }

    #[test]
    fn thermal_spectrum_is_fermi_of_levels() {
        let sd = bare_chain(4, 0.0);
        let th = thermal_theta_at_fixed_h(&sd, 0.05);
        let expect = sorted([-2.0, 0.0, 0.0, 2.0].iter().map(|&e| fermi(e, 0.05)).collect());
        for (a, b) in th.eigenvalues().unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn thermal_commutes_with_h_and_real_path_agrees() {
        let p = ModelParams::new(10, 1.0, 0.3, 1.0, 0.01, 0.05).unwrap();
        let sigma = DisplacementField::new((0..10).map(|j| 0.1 * (j as f64 * 1.3).sin()).collect()).unwrap();
        let h = build_hamiltonian(&p, &sigma).unwrap();
        let th = thermal_theta_at_fixed_h(&diagonalize(&h).unwrap(), p.kbt);
        let hd = CorrelationMatrix::from_real(&h.dense());
        let comm = hd.as_mat() * th.as_mat() - th.as_mat() * hd.as_mat();
        assert!(comm.norm_max() < 1e-10);
        let real = CorrelationMatrix::from_real(&thermal_real(&h, p.kbt).unwrap().theta);
        assert!(real.max_abs_diff(&th) < 1e-12);
    }

    #[test]
    fn thermal_is_basis_independent_in_degenerate_subspace() {
        // uniform chain has a doubly degenerate level at 0; rotate within it
        let sd = bare_chain(4, 0.0);
        let mut rotated = sd.clone();
        let (a, b) = (1, 2);
        assert!((sd.eps[a] - sd.eps[b]).abs() < 1e-12);
        let (c, s) = (0.6, 0.8);
        for j in 0..4 {
            let (ua, ub) = (sd.u[(a, j)], sd.u[(b, j)]);
            rotated.u[(a, j)] = ua * c + ub * c64::new(0.0, s);
            rotated.u[(b, j)] = ua * c64::new(0.0, s) + ub * c;
        }
        let t1 = thermal_theta_at_fixed_h(&sd, 0.05);
        let t2 = thermal_theta_at_fixed_h(&rotated, 0.05);
        assert!(t1.max_abs_diff(&t2) < 1e-12);
    }

    #[test]
    fn fixed_point_at_zero_coupling_is_bare_thermal() {
        let p = ModelParams::new(8, 1.0, 0.4, 0.0, 0.01, 0.05).unwrap();
        let r = solve_steady_state(&p, &SteadyStrategy::fixed_point(), 2).unwrap();
        assert!(r.converged);
        assert!(r.sigma.as_slice().iter().all(|&s| s == 0.0));
        let th = thermal_theta_at_fixed_h(&bare_chain(8, 0.4), p.kbt);
        assert!(r.theta.max_abs_diff(&th) < 1e-10);
    }

    #[test]
    fn dynamics_at_zero_coupling_reaches_bare_thermal() {
        let p = ModelParams::new(8, 1.0, 0.4, 0.0, 0.5, 0.05).unwrap();
        let cfg = EvolutionConfig {
            t_max: 200.0,
            ..Default::default()
        };
        let th = thermal_theta_at_fixed_h(&bare_chain(8, 0.4), p.kbt);
        for seed in [1, 2] {
            let r = solve_steady_state(&p, &SteadyStrategy::dynamics(cfg.clone()), seed).unwrap();
            assert!(r.converged);
            assert!(r.theta.max_abs_diff(&th) < 1e-6, "{}", r.theta.max_abs_diff(&th));
        }
    }

    #[test]
    fn dynamics_requires_dissipation() {
        let p = ModelParams::new(8, 1.0, 0.4, 0.5, 0.0, 0.05).unwrap();
        let r = solve_steady_state(&p, &SteadyStrategy::dynamics(EvolutionConfig::default()), 1);
        assert!(r.is_err());
    }
}
