//! Time evolution of the correlation matrix under the self-consistent
//! mean-field Lindblad equation
//!
//! ```text
//! d theta / dt = i [h(sigma(theta)), theta] - gamma (theta - theta_th(h(sigma(theta))))
//! ```
//!
//! where `theta_th(h) = f(h)` is the thermal correlation matrix of the
//! instantaneous single-particle Hamiltonian. The dissipative term is the
//! closed form of the mode-resolved double sum over jump operators; both
//! forms are available and cross-checked in tests.
//!
//! The default integrator is an integrating-factor RK4: within a step the
//! coherent motion generated by `h` at the start of the step is treated
//! exactly in the rotating frame, and RK4 handles the remainder (the change
//! of `h` through `sigma` during the step and the dissipator). For a frozen
//! Hamiltonian this makes the unitary part exact, so particle number and the
//! occupation spectrum are conserved to rounding when `gamma = 0`.

use std::collections::VecDeque;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationMatrix, OCCUPATION_TOL};
use crate::error::{Error, Result};
use crate::initstate::{thermal_real, thermal_theta_at_fixed_h, RealThermal};
use crate::model::{
    build_hamiltonian, decompose_order_parameter, diagonalize, fermi, self_consistent_sigma,
    DisplacementField, ModelParams, SingleParticleHamiltonian, SpectralDecomposition,
};
use crate::observables::{self, HarmonicSpectrum};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RediagMode {
    /// Rediagonalize `h(sigma)` at every Runge-Kutta stage.
    #[default]
    PerStage,
    /// Diagonalize once per step; stages reuse the step-start thermal matrix.
    PerStep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipatorMode {
    /// `-gamma (theta - theta_th)`.
    #[default]
    Matrix,
    /// Mode-by-mode double sum over jump operators, `O(L^4)`.
    ExplicitSum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta on the full right-hand side.
    Rk4,
    /// RK4 in the frame rotating with the step-start Hamiltonian.
    #[default]
    ExpRk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Record observables every `snapshot_stride` steps.
    pub snapshot_stride: usize,
    /// Steady when the monitored field moved less than this over `steady_window`.
    pub steady_tol: f64,
    pub steady_window: f64,
    pub stop_at_steady: bool,
    pub rediag: RediagMode,
    pub dissipator: DissipatorMode,
    pub integrator: Integrator,
    /// Harmonics `|nu| <= nu_max` are kept in the record.
    pub nu_max: usize,
    /// Occupation bounds are checked every `check_every` steps.
    pub check_every: usize,
    pub herm_tol: f64,
    /// Hold `sigma` fixed instead of recomputing it from `theta`.
    #[serde(skip)]
    pub frozen_sigma: Option<DisplacementField>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 0.05,
            t_max: 5000.0,
            snapshot_stride: 20,
            steady_tol: 1e-8,
            steady_window: 10.0,
            stop_at_steady: true,
            rediag: RediagMode::PerStage,
            dissipator: DissipatorMode::Matrix,
            integrator: Integrator::ExpRk4,
            nu_max: 10,
            check_every: 100,
            herm_tol: 1e-8,
            frozen_sigma: None,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidParams(format!("dt must lie in (0, 0.1], got {}", self.dt)));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(Error::InvalidParams(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.snapshot_stride == 0 || self.check_every == 0 {
            return Err(Error::InvalidParams("strides must be >= 1".into()));
        }
        if !(self.steady_window > 0.0) {
            return Err(Error::InvalidParams("steady_window must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt).round() as usize
    }
}

/// Which quantities to sample along a trajectory besides `sigma` and the
/// harmonics, which are always recorded.
#[derive(Clone, Debug, Default)]
pub struct Observers {
    /// Target spectrum for the unnormalized order-parameter distance.
    pub mhat_target: Option<HarmonicSpectrum>,
    /// Reference for the forward fidelity.
    pub fidelity_fw: Option<CorrelationMatrix>,
    /// Reference for the backward fidelity.
    pub fidelity_bw: Option<CorrelationMatrix>,
    /// Reference for the correlation-matrix trace distance.
    pub trace_distance_ref: Option<CorrelationMatrix>,
    /// Absolute times at which to keep full `theta` checkpoints.
    pub checkpoint_times: Vec<f64>,
    /// Keep `theta` at every n-th recorded sample.
    pub theta_sample_stride: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub l: usize,
    pub nu_max: usize,
    pub times: Vec<f64>,
    pub delta_j: Vec<f64>,
    pub sigma_series: Vec<Vec<f64>>,
    /// `mhat(nu)` for `nu = -nu_max ..= nu_max` at each sample.
    pub harmonic_series: Vec<Vec<c64>>,
    /// `max_nu |mhat(nu)|` over the full spectrum.
    pub max_harmonic: Vec<f64>,
    pub mhat_dist: Option<Vec<f64>>,
    pub f_fw: Option<Vec<f64>>,
    pub f_bw: Option<Vec<f64>>,
    pub d_t: Option<Vec<f64>>,
    pub checkpoints: Vec<(f64, CorrelationMatrix)>,
    pub theta_samples: Vec<(f64, CorrelationMatrix)>,
    pub final_theta: CorrelationMatrix,
    pub final_time: f64,
    pub steady: bool,
    pub steps: u64,
}

impl TrajectoryRecord {
    fn new(l: usize, nu_max: usize, obs: &Observers, theta0: &CorrelationMatrix, t0: f64) -> Self {
        TrajectoryRecord {
            l,
            nu_max,
            times: Vec::new(),
            delta_j: Vec::new(),
            sigma_series: Vec::new(),
            harmonic_series: Vec::new(),
            max_harmonic: Vec::new(),
            mhat_dist: obs.mhat_target.as_ref().map(|_| Vec::new()),
            f_fw: obs.fidelity_fw.as_ref().map(|_| Vec::new()),
            f_bw: obs.fidelity_bw.as_ref().map(|_| Vec::new()),
            d_t: obs.trace_distance_ref.as_ref().map(|_| Vec::new()),
            checkpoints: Vec::new(),
            theta_samples: Vec::new(),
            final_theta: theta0.clone(),
            final_time: t0,
            steady: false,
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Checkpoint stored at (within half a step of) `t`.
    pub fn checkpoint(&self, t: f64, dt: f64) -> Option<&CorrelationMatrix> {
        self.checkpoints
            .iter()
            .find(|(tc, _)| (tc - t).abs() <= 0.5 * dt)
            .map(|(_, th)| th)
    }

    /// Harmonic modulus `|mhat(nu)|` at every sample.
    pub fn harmonic_modulus(&self, nu: i64) -> Vec<f64> {
        let k = (nu + self.nu_max as i64) as usize;
        self.harmonic_series.iter().map(|row| row[k].norm()).collect()
    }

    /// Samples strictly after `t_cut` of `other` appended to `self`.
    pub fn append(&mut self, other: &TrajectoryRecord) {
        let cut = self.times.last().copied().unwrap_or(f64::NEG_INFINITY);
        let start = other.times.iter().position(|&t| t > cut).unwrap_or(other.times.len());
        let tail = |dst: &mut Option<Vec<f64>>, src: &Option<Vec<f64>>| {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => d.extend_from_slice(&s[start..]),
                _ => *dst = None,
            }
        };
        self.times.extend_from_slice(&other.times[start..]);
        self.delta_j.extend_from_slice(&other.delta_j[start..]);
        self.sigma_series.extend_from_slice(&other.sigma_series[start..]);
        self.harmonic_series.extend_from_slice(&other.harmonic_series[start..]);
        self.max_harmonic.extend_from_slice(&other.max_harmonic[start..]);
        tail(&mut self.mhat_dist, &other.mhat_dist);
        tail(&mut self.f_fw, &other.f_fw);
        tail(&mut self.f_bw, &other.f_bw);
        tail(&mut self.d_t, &other.d_t);
        self.checkpoints.extend(other.checkpoints.iter().filter(|(t, _)| *t > cut).cloned());
        self.theta_samples.extend(other.theta_samples.iter().filter(|(t, _)| *t > cut).cloned());
        self.final_theta = other.final_theta.clone();
        self.final_time = other.final_time;
        self.steady = other.steady;
        self.steps += other.steps;
    }
}

/// Coherent part `i (h theta - theta h)` written out entry by entry.
pub fn coherent_explicit(theta: &CorrelationMatrix, params: &ModelParams, sigma: &DisplacementField) -> Mat<c64> {
    let t = theta.as_mat();
    let l = t.nrows();
    let b = |j: usize| params.j + sigma.as_slice()[j % l];
    let i = c64::new(0.0, 1.0);
    Mat::from_fn(l, l, |j, k| {
        let (jm, jp) = ((j + l - 1) % l, (j + 1) % l);
        let (km, kp) = ((k + l - 1) % l, (k + 1) % l);
        -i * b(jm) * t[(jm, k)] + i * b(k) * t[(j, kp)] - i * b(j) * t[(jp, k)]
            + i * b(km) * t[(j, km)]
    })
}

/// Coherent part as the dense commutator `i [h, theta]`.
pub fn coherent_matrix(theta: &CorrelationMatrix, h: &SingleParticleHamiltonian) -> Mat<c64> {
    let hd = CorrelationMatrix::from_real(&h.dense()).into_mat();
    let t = theta.as_mat();
    let comm = &hd * t - t * &hd;
    Mat::from_fn(comm.nrows(), comm.ncols(), |a, b| comm[(a, b)] * c64::new(0.0, 1.0))
}

/// Dissipator as the double sum over modes `e` and sites `r`, term by term.
pub fn dissipator_explicit(theta: &CorrelationMatrix, sd: &SpectralDecomposition, params: &ModelParams) -> Mat<c64> {
    let t = theta.as_mat();
    let u = &sd.u;
    let l = t.nrows();
    let f: Vec<f64> = sd.eps.iter().map(|&e| fermi(e, params.kbt)).collect();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Mat::from_fn(l, l, |j, jp| {
        let mut acc = c64::new(0.0, 0.0);
        for e in 0..l {
            let (fe, ge) = (f[e], 1.0 - f[e]);
            for r in 0..l {
                let loss = u[(e, r)] * u[(e, j)].conj() * t[(r, jp)]
                    + u[(e, jp)] * u[(e, r)].conj() * t[(j, r)];
                let gain = u[(e, r)].conj() * u[(e, jp)] * (c64::new(delta(r, j), 0.0) - t[(j, r)])
                    + u[(e, j)].conj() * u[(e, r)] * (c64::new(delta(jp, r), 0.0) - t[(r, jp)]);
                acc += -loss * ge + gain * fe;
            }
        }
        acc * (0.5 * params.gamma)
    })
}

/// Dissipator in closed form `-gamma (theta - theta_th)`.
pub fn dissipator_matrix(theta: &CorrelationMatrix, sd: &SpectralDecomposition, params: &ModelParams) -> Mat<c64> {
    let th = thermal_theta_at_fixed_h(sd, params.kbt);
    let (t, th) = (theta.as_mat(), th.as_mat());
    Mat::from_fn(t.nrows(), t.ncols(), |a, b| (t[(a, b)] - th[(a, b)]) * (-params.gamma))
}

/// `d theta / dt` with `sigma` recomputed from `theta` (or held at `frozen`).
pub fn rhs(
    theta: &CorrelationMatrix,
    params: &ModelParams,
    mode: DissipatorMode,
    frozen: Option<&DisplacementField>,
) -> Result<Mat<c64>> {
    let sigma = match frozen {
        Some(s) => s.clone(),
        None => self_consistent_sigma(theta, params.g),
    };
    let h = build_hamiltonian(params, &sigma)?;
    let sd = diagonalize(&h)?;
    let coh = coherent_matrix(theta, &h);
    let dis = match mode {
        DissipatorMode::Matrix => dissipator_matrix(theta, &sd, params),
        DissipatorMode::ExplicitSum => dissipator_explicit(theta, &sd, params),
    };
    Ok(coh + dis)
}

fn spectral_from_real(th: &RealThermal) -> SpectralDecomposition {
    let l = th.eps.len();
    SpectralDecomposition {
        eps: th.eps.clone(),
        u: Mat::from_fn(l, l, |e, j| c64::new(th.vecs[(j, e)], 0.0)),
    }
}

/// `theta_th(h0 + dh)` to first order in `dh`, from the eigenpairs of `h0`:
/// `V (F o (V^T dh V)) V^T` with `F` the divided differences of the
/// Fermi function.
fn linearized_thermal(base: &RealThermal, dh: &Mat<f64>, kbt: f64) -> RealThermal {
    let l = base.eps.len();
    let v = &base.vecs;
    let f: Vec<f64> = base.eps.iter().map(|&e| fermi(e, kbt)).collect();
    let x = v.transpose() * (dh * v);
    let y = Mat::<f64>::from_fn(l, l, |a, b| {
        let de = base.eps[a] - base.eps[b];
        let dd = if de.abs() > 1e-9 {
            (f[a] - f[b]) / de
        } else if kbt > 0.0 {
            -f[a] * (1.0 - f[a]) / kbt
        } else {
            0.0
        };
        dd * x[(a, b)]
    });
    let corr = v * (&y * v.transpose());
    RealThermal {
        eps: base.eps.clone(),
        vecs: base.vecs.clone(),
        theta: &base.theta + &corr,
    }
}

/// `exp(i h s)` from real eigenpairs.
fn rotation(th: &RealThermal, s: f64) -> Mat<c64> {
    let l = th.eps.len();
    let v = &th.vecs;
    let (sin_e, cos_e): (Vec<f64>, Vec<f64>) = th.eps.iter().map(|e| (e * s).sin_cos()).unzip();
    let cos = Mat::<f64>::from_fn(l, l, |j, e| v[(j, e)] * cos_e[e]);
    let sin = Mat::<f64>::from_fn(l, l, |j, e| v[(j, e)] * sin_e[e]);
    let re = &cos * v.transpose();
    let im = &sin * v.transpose();
    Mat::from_fn(l, l, |a, b| c64::new(re[(a, b)], im[(a, b)]))
}

/// `u x u^dag`.
fn conjugate(u: &Mat<c64>, x: &Mat<c64>) -> Mat<c64> {
    let ux = u * x;
    &ux * u.adjoint()
}

fn axpy(x: &Mat<c64>, a: f64, y: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + y[(i, j)] * a)
}

struct Stepper<'a> {
    params: &'a ModelParams,
    cfg: &'a EvolutionConfig,
    left: Mat<c64>,
    right: Mat<c64>,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a ModelParams, cfg: &'a EvolutionConfig) -> Self {
        let l = params.l;
        Stepper {
            params,
            cfg,
            left: Mat::zeros(l, l),
            right: Mat::zeros(l, l),
        }
    }

    fn sigma_of(&self, x: &Mat<c64>) -> Vec<f64> {
        if let Some(s) = &self.cfg.frozen_sigma {
            return s.as_slice().to_vec();
        }
        let l = x.nrows();
        let g2 = self.params.g * self.params.g;
        (0..l)
            .map(|j| {
                let k = (j + 1) % l;
                g2 * (x[(j, k)] + x[(k, j)]).re
            })
            .collect()
    }

    fn hamiltonian(&self, sigma: &[f64]) -> SingleParticleHamiltonian {
        SingleParticleHamiltonian {
            hopping: sigma.iter().map(|s| self.params.j + s).collect(),
            mu: self.params.mu,
        }
    }

    fn rediag_each_stage(&self) -> bool {
        self.cfg.rediag == RediagMode::PerStage && self.cfg.frozen_sigma.is_none()
    }

    /// Right-hand side at stage state `x`. With `frame = Some(h0)` the
    /// coherent part is generated by `h(sigma(x)) - h0` only.
    fn eval(
        &mut self,
        x: &Mat<c64>,
        frame: Option<&SingleParticleHamiltonian>,
        h0: &SingleParticleHamiltonian,
        step_thermal: &RealThermal,
        first_stage: bool,
    ) -> Result<Mat<c64>> {
        let sigma = self.sigma_of(x);
        let h = self.hamiltonian(&sigma);
        let fresh;
        let thermal = if first_stage || self.cfg.frozen_sigma.is_some() {
            step_thermal
        } else if self.rediag_each_stage() || self.cfg.dissipator == DissipatorMode::ExplicitSum {
            fresh = thermal_real(&h, self.params.kbt)?;
            &fresh
        } else {
            // first-order update in the step's eigenbasis
            let dh = SingleParticleHamiltonian {
                hopping: h.hopping.iter().zip(&h0.hopping).map(|(a, b)| a - b).collect(),
                mu: 0.0,
            };
            fresh = linearized_thermal(step_thermal, &dh.dense(), self.params.kbt);
            &fresh
        };
        let gen = match frame {
            Some(h0) => SingleParticleHamiltonian {
                hopping: h.hopping.iter().zip(&h0.hopping).map(|(a, b)| a - b).collect(),
                mu: 0.0,
            },
            None => h,
        };
        gen.apply_left(x, &mut self.left);
        gen.apply_right(x, &mut self.right);
        let l = x.nrows();
        let gamma = self.params.gamma;
        let i = c64::new(0.0, 1.0);
        let mut out = Mat::from_fn(l, l, |a, b| i * (self.left[(a, b)] - self.right[(a, b)]));
        match self.cfg.dissipator {
            DissipatorMode::Matrix => {
                for b in 0..l {
                    for a in 0..l {
                        out[(a, b)] -= (x[(a, b)] - c64::new(thermal.theta[(a, b)], 0.0)) * gamma;
                    }
                }
            }
            DissipatorMode::ExplicitSum => {
                let sd = spectral_from_real(thermal);
                let xm = CorrelationMatrix::from_mat(x.clone())?;
                out += dissipator_explicit(&xm, &sd, self.params);
            }
        }
        Ok(out)
    }

    fn step(&mut self, theta: &Mat<c64>) -> Result<Mat<c64>> {
        let dt = self.cfg.dt;
        let sigma0 = self.sigma_of(theta);
        let h0 = self.hamiltonian(&sigma0);
        let th0 = thermal_real(&h0, self.params.kbt)?;
        match self.cfg.integrator {
            Integrator::Rk4 => {
                let k1 = self.eval(theta, None, &h0, &th0, true)?;
                let k2 = self.eval(&axpy(theta, 0.5 * dt, &k1), None, &h0, &th0, false)?;
                let k3 = self.eval(&axpy(theta, 0.5 * dt, &k2), None, &h0, &th0, false)?;
                let k4 = self.eval(&axpy(theta, dt, &k3), None, &h0, &th0, false)?;
                let l = theta.nrows();
                Ok(Mat::from_fn(l, l, |a, b| {
                    theta[(a, b)]
                        + (k1[(a, b)] + (k2[(a, b)] + k3[(a, b)]) * 2.0 + k4[(a, b)]) * (dt / 6.0)
                }))
            }
            Integrator::ExpRk4 => {
                let half = rotation(&th0, 0.5 * dt);
                let full = rotation(&th0, dt);
                let frame = Some(&h0);
                let k1 = self.eval(theta, frame, &h0, &th0, true)?;
                let a = conjugate(&half, &axpy(theta, 0.5 * dt, &k1));
                let n2 = self.eval(&a, frame, &h0, &th0, false)?;
                let b = conjugate(&half, theta);
                let n3 = self.eval(&axpy(&b, 0.5 * dt, &n2), frame, &h0, &th0, false)?;
                let c = conjugate(&half, &axpy(&b, dt, &n3));
                let n4 = self.eval(&c, frame, &h0, &th0, false)?;
                let d = conjugate(&full, &axpy(theta, dt / 6.0, &k1));
                let f = conjugate(&half, &(&n2 + &n3));
                let l = theta.nrows();
                Ok(Mat::from_fn(l, l, |i, j| {
                    d[(i, j)] + f[(i, j)] * (dt / 3.0) + n4[(i, j)] * (dt / 6.0)
                }))
            }
        }
    }
}

/// Advances `theta` by one step of size `config.dt`, re-Hermitizes and
/// checks the occupation bounds.
pub fn step(theta: &CorrelationMatrix, params: &ModelParams, config: &EvolutionConfig) -> Result<CorrelationMatrix> {
    config.validate()?;
    check_dims(theta, params)?;
    let mut stepper = Stepper::new(params, config);
    let mut next = CorrelationMatrix::from_mat(stepper.step(theta.as_mat())?)?;
    let drift = next.hermiticity_error();
    next.hermitize();
    if drift > config.herm_tol {
        return Err(Error::Invariant {
            time: config.dt,
            detail: format!("hermiticity drift {drift:.3e} in one step"),
        });
    }
    next.check_invariants(config.herm_tol, OCCUPATION_TOL, config.dt)?;
    Ok(next)
}

fn check_dims(theta: &CorrelationMatrix, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if theta.len() != params.l {
        return Err(Error::DimensionMismatch {
            expected: params.l,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Evolves from `t = 0`; see [`evolve_from`].
pub fn evolve(
    theta0: &CorrelationMatrix,
    params: &ModelParams,
    config: &EvolutionConfig,
    observers: &Observers,
) -> Result<TrajectoryRecord> {
    evolve_from(theta0, 0.0, params, config, observers)
}

/// Integrates from `t0` to `t0 + t_max`, or until steady when
/// `config.stop_at_steady` is set. Sample times are `t0 + n dt` exactly.
pub fn evolve_from(
    theta0: &CorrelationMatrix,
    t0: f64,
    params: &ModelParams,
    config: &EvolutionConfig,
    observers: &Observers,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    check_dims(theta0, params)?;
    if let Some(s) = &config.frozen_sigma {
        if s.len() != params.l {
            return Err(Error::DimensionMismatch {
                expected: params.l,
                got: s.len(),
            });
        }
    }
    let l = params.l;
    let dt = config.dt;
    let n_steps = config.steps_for(config.t_max);
    let window = config.steps_for(config.steady_window).max(1);
    let checkpoint_steps: Vec<usize> = observers
        .checkpoint_times
        .iter()
        .filter(|&&t| t >= t0 - 0.5 * dt)
        .map(|&t| ((t - t0) / dt).round() as usize)
        .collect();

    let mut rec = TrajectoryRecord::new(l, config.nu_max, observers, theta0, t0);
    let mut stepper = Stepper::new(params, config);
    let mut theta = theta0.clone();
    theta.hermitize();
    // steady detection tracks sigma, or the bare bond field when sigma is
    // frozen or identically zero
    let bare_monitor = config.frozen_sigma.is_some() || params.g == 0.0;
    let monitor = |th: &CorrelationMatrix| -> Vec<f64> {
        if bare_monitor {
            self_consistent_sigma(th, 1.0).into_vec()
        } else {
            self_consistent_sigma(th, params.g).into_vec()
        }
    };
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(window + 1);
    history.push_back(monitor(&theta));

    let mut sample_count = 0usize;
    let mut sample = |rec: &mut TrajectoryRecord, th: &CorrelationMatrix, t: f64| -> Result<()> {
        record_sample(rec, th, t, params, config, observers, sample_count)?;
        sample_count += 1;
        Ok(())
    };
    sample(&mut rec, &theta, t0)?;
    if checkpoint_steps.contains(&0) {
        rec.checkpoints.push((t0, theta.clone()));
    }

    let mut last_sampled = 0usize;
    let progress_every = config.steps_for(500.0).max(1);
    for n in 1..=n_steps {
        let t = t0 + n as f64 * dt;
        let mut next = CorrelationMatrix::from_mat(stepper.step(theta.as_mat())?)?;
        let drift = next.hermiticity_error();
        if drift > config.herm_tol || !drift.is_finite() {
            return Err(Error::Invariant {
                time: t,
                detail: format!("hermiticity drift {drift:.3e} in one step"),
            });
        }
        next.hermitize();
        theta = next;
        if n % config.check_every == 0 {
            theta.check_invariants(config.herm_tol, OCCUPATION_TOL, t)?;
        }
        if checkpoint_steps.contains(&n) {
            rec.checkpoints.push((t, theta.clone()));
        }

        let now = monitor(&theta);
        if history.len() > window {
            history.pop_front();
        }
        let steady = history.len() > window - 1
            && n >= window
            && history
                .front()
                .map(|old| {
                    old.iter()
                        .zip(&now)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                        < config.steady_tol
                })
                .unwrap_or(false);
        history.push_back(now);

        let stop = steady && config.stop_at_steady;
        if n % config.snapshot_stride == 0 || n == n_steps || stop {
            sample(&mut rec, &theta, t)?;
            last_sampled = n;
        }
        rec.steps = n as u64;
        rec.final_time = t;
        rec.steady = steady;
        if n % progress_every == 0 {
            log::info!("L = {} t = {t:.0} of {:.0}", params.l, t0 + config.t_max);
        }
        if stop {
            break;
        }
    }
    debug_assert!(last_sampled == rec.steps as usize || n_steps == 0);
    rec.final_theta = theta;
    Ok(rec)
}

fn record_sample(
    rec: &mut TrajectoryRecord,
    theta: &CorrelationMatrix,
    t: f64,
    params: &ModelParams,
    config: &EvolutionConfig,
    obs: &Observers,
    index: usize,
) -> Result<()> {
    let sigma = match &config.frozen_sigma {
        Some(s) => s.clone(),
        None => self_consistent_sigma(theta, params.g),
    };
    let profile = decompose_order_parameter(&sigma)?;
    let spec = observables::harmonics(&profile.m);
    rec.times.push(t);
    rec.delta_j.push(profile.delta_j);
    rec.sigma_series.push(sigma.into_vec());
    rec.harmonic_series.push(spec.window(config.nu_max));
    rec.max_harmonic.push(spec.max_modulus());
    if let (Some(target), Some(out)) = (&obs.mhat_target, rec.mhat_dist.as_mut()) {
        out.push(observables::spectral_distance(&spec, target)?);
    }
    let time_err = |e: Error| match e {
        Error::Invariant { detail, .. } => Error::Invariant { time: t, detail },
        other => other,
    };
    if let (Some(r), Some(out)) = (&obs.fidelity_fw, rec.f_fw.as_mut()) {
        out.push(observables::fidelity(theta, r).map_err(time_err)?);
    }
    if let (Some(r), Some(out)) = (&obs.fidelity_bw, rec.f_bw.as_mut()) {
        out.push(observables::fidelity(theta, r).map_err(time_err)?);
    }
    if let (Some(r), Some(out)) = (&obs.trace_distance_ref, rec.d_t.as_mut()) {
        out.push(observables::trace_distance_corr(theta, r)?);
    }
    if let Some(stride) = obs.theta_sample_stride {
        if index % stride.max(1) == 0 {
            rec.theta_samples.push((t, theta.clone()));
        }
    }
    Ok(())
}

/// Exact many-body reference for `L <= 6` at frozen `sigma`: returns
/// `theta(t)` on `t_grid` from the full density-matrix Lindblad evolution.
pub fn oracle_small_l(
    theta0: &CorrelationMatrix,
    sigma_frozen: &DisplacementField,
    params: &ModelParams,
    t_grid: &[f64],
) -> Result<Vec<CorrelationMatrix>> {
    let h = build_hamiltonian(params, sigma_frozen)?;
    let gen = crate::oracle::build_liouvillian(&h, params)?;
    let rho0 = crate::oracle::gaussian_state(theta0)?;
    let run = crate::oracle::evolve_many_body(&rho0, &gen, t_grid, None, crate::oracle::ORACLE_DT)?;
    Ok(run.thetas)
}
