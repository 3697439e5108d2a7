//! Experiments built from the lower layers: steady-state classification,
//! phase-diagram scans, single quenches with DPT analysis, the two-step
//! (Pontus-Mpemba) protocol and the multi-copy (quantum Mpemba) comparison.
//!
//! Ordered steady states are degenerate under lattice translations and the
//! bond reflection. Distances to a target therefore use the closest member
//! of the target's symmetry orbit, and the backward fidelity uses the
//! target state aligned to the trajectory's final state.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::evolution::{evolve_from, EvolutionConfig, Observers, RediagMode, TrajectoryRecord};
use crate::initstate::{solve_steady_state, RandomInitSpec, SteadyMethod, SteadyStateResult, SteadyStrategy};
use crate::model::{decompose_order_parameter, DisplacementField, ModelParams};
use crate::observables::{
    self, detect_dpt, dominant_harmonic, euclidean_param_distance, relaxation_time, upper_envelope,
    DistanceSeries, DptConfig, DptReport, HarmonicSpectrum, Interpolation, Relaxation,
};

/// Amplitude below which a state counts as disordered.
pub const DISORDER_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseKind {
    /// Uniform order, dominant harmonic `nu = 0`.
    OP,
    /// Crystal phase, modulated at `nu > 0`.
    CP,
    /// Disordered.
    DP,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabel {
    pub kind: PhaseKind,
    pub dominant_nu: Option<i64>,
    /// `|mhat|` at the dominant harmonic.
    pub amplitude: f64,
}

impl PhaseLabel {
    pub fn from_spectrum(s: &HarmonicSpectrum) -> Self {
        let (nu, amp) = dominant_harmonic(s);
        if s.max_modulus() < DISORDER_THRESHOLD {
            PhaseLabel { kind: PhaseKind::DP, dominant_nu: None, amplitude: amp }
        } else if nu == 0 {
            PhaseLabel { kind: PhaseKind::OP, dominant_nu: Some(0), amplitude: amp }
        } else {
            PhaseLabel { kind: PhaseKind::CP, dominant_nu: Some(nu), amplitude: amp }
        }
    }

    pub fn from_sigma(sigma: &DisplacementField) -> Result<Self> {
        let profile = decompose_order_parameter(sigma)?;
        Ok(Self::from_spectrum(&observables::harmonics(&profile.m)))
    }

    /// Same phase and same dominant harmonic.
    pub fn same_phase(&self, other: &PhaseLabel) -> bool {
        self.kind == other.kind && self.dominant_nu == other.dominant_nu
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.dominant_nu) {
            (PhaseKind::CP, Some(nu)) => write!(f, "CP({nu})"),
            (kind, _) => write!(f, "{kind:?}"),
        }
    }
}

/// Evolution settings suited to `L = 100` production runs: one
/// diagonalization per step of 0.1, samples every 1.0.
pub fn production_evolution(t_max: f64) -> EvolutionConfig {
    EvolutionConfig {
        t_max,
        dt: 0.1,
        snapshot_stride: 10,
        rediag: RediagMode::PerStep,
        ..EvolutionConfig::default()
    }
}

/// Prepares steady states by the dynamics strategy and memoizes them, in
/// memory and optionally on disk as checkpoints.
pub struct SteadyProvider {
    evolution: EvolutionConfig,
    init: RandomInitSpec,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, Arc<SteadyStateResult>>>,
}

#[derive(Serialize, Deserialize)]
struct CachedMeta {
    converged: bool,
    effort: f64,
    seed: u64,
}

impl SteadyProvider {
    pub fn new(evolution: EvolutionConfig, init: RandomInitSpec) -> Self {
        SteadyProvider {
            evolution: EvolutionConfig { stop_at_steady: true, ..evolution },
            init,
            cache_dir: None,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Persist results under `dir` and reuse them across processes.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn evolution(&self) -> &EvolutionConfig {
        &self.evolution
    }

    fn key(&self, params: &ModelParams, seed: u64) -> String {
        use sha2::{Digest, Sha256};
        let desc = serde_json::json!({
            "params": params,
            "evolution": self.evolution,
            "init": self.init,
            "seed": seed,
        });
        let digest = Sha256::digest(desc.to_string().as_bytes());
        hex::encode(&digest[..12])
    }

    pub fn get(&self, params: &ModelParams, seed: u64) -> Result<Arc<SteadyStateResult>> {
        let key = self.key(params, seed);
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let result = match self.load(&key, params, seed)? {
            Some(r) => r,
            None => {
                log::info!(
                    "steady state at (mu, g) = ({}, {}), seed {seed}",
                    params.mu,
                    params.g
                );
                let strategy = SteadyStrategy::Dynamics { evolution: self.evolution.clone(), init: self.init };
                let r = solve_steady_state(params, &strategy, seed)?;
                if !r.converged {
                    log::warn!(
                        "steady state at ({}, {}) seed {seed} not converged by t = {}",
                        params.mu,
                        params.g,
                        r.effort
                    );
                }
                self.store(&key, &r)?;
                r
            }
        };
        let result = Arc::new(result);
        self.memo.lock().unwrap().insert(key, result.clone());
        Ok(result)
    }

    fn load(&self, key: &str, params: &ModelParams, seed: u64) -> Result<Option<SteadyStateResult>> {
        let Some(dir) = &self.cache_dir else { return Ok(None) };
        let (bin, meta) = (dir.join(format!("{key}.gnth")), dir.join(format!("{key}.json")));
        if !bin.exists() || !meta.exists() {
            return Ok(None);
        }
        let (theta, _) = checkpoint::read(&bin)?;
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let m: CachedMeta = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let sigma = crate::model::self_consistent_sigma(&theta, params.g);
        Ok(Some(SteadyStateResult {
            theta,
            sigma,
            converged: m.converged,
            effort: m.effort,
            method: SteadyMethod::Dynamics,
            seed,
        }))
    }

    fn store(&self, key: &str, r: &SteadyStateResult) -> Result<()> {
        let Some(dir) = &self.cache_dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::write(&dir.join(format!("{key}.gnth")), &r.theta, r.effort)?;
        let meta = CachedMeta { converged: r.converged, effort: r.effort, seed: r.seed };
        checkpoint::write_atomic(
            &dir.join(format!("{key}.json")),
            serde_json::to_string(&meta).unwrap().as_bytes(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedLabel {
    pub seed: u64,
    pub label: PhaseLabel,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Classification {
    pub label: PhaseLabel,
    pub per_seed: Vec<SeedLabel>,
    /// The first seeds disagreed and extra seeds were run.
    pub frustrated: bool,
}

/// Steady-state phase from the given seeds. If they disagree, two more
/// seeds are run and the majority label is reported.
pub fn classify_steady_state(
    params: &ModelParams,
    provider: &SteadyProvider,
    seeds: &[u64],
) -> Result<Classification> {
    if seeds.is_empty() {
        return Err(Error::InvalidParams("at least one seed is needed".into()));
    }
    let run = |seed: u64| -> Result<SeedLabel> {
        let r = provider.get(params, seed)?;
        Ok(SeedLabel { seed, label: PhaseLabel::from_sigma(&r.sigma)?, converged: r.converged })
    };
    let mut per_seed = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    let agree = per_seed.iter().all(|s| s.label.same_phase(&per_seed[0].label));
    if !agree {
        let top = seeds.iter().copied().max().unwrap();
        for extra in [top + 1, top + 2] {
            per_seed.push(run(extra)?);
        }
    }
    let votes = |l: &PhaseLabel| per_seed.iter().filter(|s| s.label.same_phase(l)).count();
    let label = per_seed
        .iter()
        .map(|s| s.label)
        .max_by(|a, b| votes(a).cmp(&votes(b)).then(std::cmp::Ordering::Greater))
        .unwrap();
    Ok(Classification { label, per_seed, frustrated: !agree })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanPoint {
    pub mu: f64,
    pub g: f64,
    pub seed: u64,
    pub label: Option<PhaseLabel>,
    pub frustrated: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub mu: f64,
    pub g: f64,
    pub between: (String, String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseMap {
    pub mus: Vec<f64>,
    pub gs: Vec<f64>,
    /// Row-major in `g` then `mu`: index `ig * mus.len() + imu`.
    pub points: Vec<ScanPoint>,
    pub boundaries: Vec<BoundaryPoint>,
}

impl PhaseMap {
    pub fn at(&self, imu: usize, ig: usize) -> &ScanPoint {
        &self.points[ig * self.mus.len() + imu]
    }

    /// Midpoint between the largest disordered `g` and the next ordered one
    /// along the column `imu` (scanning upward in `g`).
    pub fn ordering_onset(&self, imu: usize) -> Option<f64> {
        let mut order: Vec<usize> = (0..self.gs.len()).collect();
        order.sort_by(|&a, &b| self.gs[a].total_cmp(&self.gs[b]));
        for w in order.windows(2) {
            let (lo, hi) = (self.at(imu, w[0]), self.at(imu, w[1]));
            if let (Some(a), Some(b)) = (lo.label, hi.label) {
                if a.kind == PhaseKind::DP && b.kind != PhaseKind::DP {
                    return Some(0.5 * (lo.g + hi.g));
                }
            }
        }
        None
    }
}

fn boundaries(mus: &[f64], gs: &[f64], points: &[ScanPoint]) -> Vec<BoundaryPoint> {
    let mut out = Vec::new();
    let idx = |imu: usize, ig: usize| ig * mus.len() + imu;
    let mut check = |a: &ScanPoint, b: &ScanPoint| {
        if let (Some(la), Some(lb)) = (a.label, b.label) {
            if !la.same_phase(&lb) {
                out.push(BoundaryPoint {
                    mu: 0.5 * (a.mu + b.mu),
                    g: 0.5 * (a.g + b.g),
                    between: (la.to_string(), lb.to_string()),
                });
            }
        }
    };
    for ig in 0..gs.len() {
        for imu in 0..mus.len() {
            if imu + 1 < mus.len() {
                check(&points[idx(imu, ig)], &points[idx(imu + 1, ig)]);
            }
            if ig + 1 < gs.len() {
                check(&points[idx(imu, ig)], &points[idx(imu, ig + 1)]);
            }
        }
    }
    out
}

/// Classifies every `(mu, g)` grid point on `workers` threads. Point seeds
/// derive from `(master_seed, index)`; failures are recorded per point.
pub fn scan_phase_diagram(
    mus: &[f64],
    gs: &[f64],
    base: &ModelParams,
    provider: &SteadyProvider,
    master_seed: u64,
    workers: usize,
) -> Result<PhaseMap> {
    if mus.is_empty() || gs.is_empty() {
        return Err(Error::InvalidParams("scan grid is empty".into()));
    }
    let grid: Vec<(f64, f64)> = gs.iter().flat_map(|&g| mus.iter().map(move |&mu| (mu, g))).collect();
    let results = crate::harness::sweep::sweep_executor(&grid, master_seed, workers, |&(mu, g), seed| {
        let params = base.with_point(mu, g);
        params.validate()?;
        classify_steady_state(&params, provider, &[seed, seed.wrapping_add(1)])
    })?;
    let points: Vec<ScanPoint> = results
        .into_iter()
        .zip(&grid)
        .map(|(r, &(mu, g))| match r.outcome {
            Ok(c) => ScanPoint { mu, g, seed: r.seed, label: Some(c.label), frustrated: c.frustrated, error: None },
            Err(e) => ScanPoint { mu, g, seed: r.seed, label: None, frustrated: false, error: Some(e) },
        })
        .collect();
    Ok(PhaseMap {
        mus: mus.to_vec(),
        gs: gs.to_vec(),
        boundaries: boundaries(mus, gs, &points),
        points,
    })
}

/// All translations and reflections of a target profile; distances are
/// taken to the nearest member.
#[derive(Clone, Debug)]
pub struct TargetOrbit {
    /// `(shift, reflect, m)` per orbit element.
    members: Vec<(usize, bool, Vec<f64>)>,
}

impl TargetOrbit {
    pub fn new(sigma: &DisplacementField) -> Result<Self> {
        let l = sigma.len();
        let mut members = Vec::with_capacity(2 * l);
        for reflect in [false, true] {
            for shift in 0..l {
                let m = decompose_order_parameter(&sigma.transformed(shift, reflect))?.m;
                members.push((shift, reflect, m));
            }
        }
        Ok(TargetOrbit { members })
    }

    /// `(Mhat, shift, reflect)` for the closest member. By Parseval,
    /// `sum_nu |mhat - mhat'|^2 = (1/L) sum_j (m_j - m'_j)^2`.
    pub fn distance(&self, m: &[f64]) -> (f64, usize, bool) {
        let l = m.len() as f64;
        let mut best = (f64::INFINITY, 0, false);
        for (shift, reflect, target) in &self.members {
            let d2: f64 = m.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, *shift, *reflect);
            }
        }
        ((best.0 / l).sqrt(), best.1, best.2)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QuenchConfig {
    pub evolution: EvolutionConfig,
    pub dpt: DptConfig,
    /// Seed of the steady states on both sides of the quench.
    pub seed: u64,
    /// Spacing of the `theta` samples used for the backward fidelity.
    pub theta_sample_interval: f64,
    /// Absolute times at which `theta` checkpoints are kept.
    pub checkpoint_times: Vec<f64>,
}

impl Default for QuenchConfig {
    fn default() -> Self {
        QuenchConfig {
            evolution: production_evolution(4000.0),
            dpt: DptConfig::default(),
            seed: 1,
            theta_sample_interval: 5.0,
            checkpoint_times: Vec::new(),
        }
    }
}

/// Which member of the target's degenerate steady-state family a leg is
/// measured against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetReference {
    /// The leg settled on the family (steady, same `|mhat|` spectrum); its
    /// endpoint is the reference. Modulated states can settle at Fourier
    /// phases no lattice symmetry connects.
    Endpoint,
    /// Lattice image of the prepared steady state nearest to the endpoint;
    /// `Mhat` is taken to the nearest image at every sample.
    Image { shift: usize, reflect: bool },
}

/// `|mhat|` spectra closer than this put an endpoint on the target family.
pub const FAMILY_TOL: f64 = 1e-4;

/// One evolution leg towards a target point, with target-referenced series.
#[derive(Clone, Debug)]
pub struct QuenchLeg {
    pub target: ModelParams,
    pub record: TrajectoryRecord,
    /// `Mhat(t)` to the target reference, at every sample.
    pub mhat: DistanceSeries,
    /// `F_bw(t)` against the target reference.
    pub f_bw: DistanceSeries,
    pub reference: TargetReference,
}

impl QuenchLeg {
    /// `M(t) = Mhat(t) / norm`.
    pub fn normalized(&self, norm: f64) -> Result<DistanceSeries> {
        if !(norm > 0.0) {
            return Err(Error::ZeroNormalization);
        }
        Ok(DistanceSeries::new(
            "M",
            self.mhat.times.clone(),
            self.mhat.values.iter().map(|v| v / norm).collect(),
        ))
    }
}

/// Evolves `theta0` from `t0` under `target` and measures it against the
/// steady-state family of `eq`, see [`TargetReference`].
pub fn run_leg(
    theta0: &CorrelationMatrix,
    t0: f64,
    target: &ModelParams,
    eq: &SteadyStateResult,
    reference_in: Option<&CorrelationMatrix>,
    cfg: &QuenchConfig,
) -> Result<QuenchLeg> {
    let evo = &cfg.evolution;
    let stride = ((cfg.theta_sample_interval / (evo.dt * evo.snapshot_stride as f64)).round() as usize).max(1);
    let observers = Observers {
        fidelity_fw: reference_in.cloned(),
        trace_distance_ref: reference_in.cloned(),
        checkpoint_times: cfg.checkpoint_times.clone(),
        theta_sample_stride: Some(stride),
        ..Observers::default()
    };
    let mut record = evolve_from(theta0, t0, target, evo, &observers)?;
    let final_m = decompose_order_parameter(&crate::model::self_consistent_sigma(&record.final_theta, target.g))?.m;
    let eq_m = decompose_order_parameter(&eq.sigma)?.m;
    let gap = modulus_distance(&final_m, &eq_m);
    log::debug!("endpoint |mhat| distance to the target steady state: {gap:.2e}");
    let settled = record.steady && gap < FAMILY_TOL;
    let orbit = TargetOrbit::new(&eq.sigma)?;
    let (reference, theta_ref) = if settled {
        (TargetReference::Endpoint, record.final_theta.clone())
    } else {
        let (_, shift, reflect) = orbit.distance(&final_m);
        (TargetReference::Image { shift, reflect }, eq.theta.transformed(shift, reflect))
    };
    let mut mhat = Vec::with_capacity(record.len());
    for sigma in &record.sigma_series {
        let m = decompose_order_parameter(&DisplacementField::new(sigma.clone())?)?.m;
        mhat.push(match reference {
            TargetReference::Endpoint => profile_distance(&m, &final_m),
            TargetReference::Image { .. } => orbit.distance(&m).0,
        });
    }
    let mut fb_t = Vec::new();
    let mut fb_v = Vec::new();
    for (t, th) in &record.theta_samples {
        fb_t.push(*t);
        fb_v.push(observables::fidelity(th, &theta_ref)?);
    }
    // the samples were only needed for the backward fidelity
    record.theta_samples.clear();
    record.theta_samples.shrink_to_fit();
    Ok(QuenchLeg {
        target: *target,
        mhat: DistanceSeries::new("Mhat", record.times.clone(), mhat),
        f_bw: DistanceSeries::new("F_bw", fb_t, fb_v),
        record,
        reference,
    })
}

/// `Mhat` between two site profiles, `sqrt(sum_nu |mhat - mhat'|^2)`, by Parseval.
fn profile_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Distance between the `|mhat|` spectra of two profiles, blind to Fourier phases.
fn modulus_distance(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (observables::harmonics(a), observables::harmonics(b));
    sa.amplitudes()
        .iter()
        .zip(sb.amplitudes())
        .map(|(x, y)| (x.norm() - y.norm()).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug)]
pub struct QuenchOutcome {
    pub p_in: ModelParams,
    pub p_eq: ModelParams,
    pub label_in: PhaseLabel,
    pub label_eq: PhaseLabel,
    pub leg: QuenchLeg,
    pub dpt: DptReport,
}

/// Quench from the steady state at `p_in` to parameters `p_eq` at `t = 0+`.
pub fn run_quench(
    p_in: &ModelParams,
    p_eq: &ModelParams,
    cfg: &QuenchConfig,
    provider: &SteadyProvider,
) -> Result<QuenchOutcome> {
    let s_in = provider.get(p_in, cfg.seed)?;
    let s_eq = provider.get(p_eq, cfg.seed)?;
    log::info!(
        "quench ({}, {}) -> ({}, {}), horizon {}",
        p_in.mu,
        p_in.g,
        p_eq.mu,
        p_eq.g,
        cfg.evolution.t_max
    );
    let leg = run_leg(&s_in.theta, 0.0, p_eq, &s_eq, Some(&s_in.theta), cfg)?;
    let dpt = detect_dpt(
        &leg.record.times,
        &leg.record.harmonic_series,
        Some((&leg.f_bw.times, &leg.f_bw.values)),
        &cfg.dpt,
    );
    Ok(QuenchOutcome {
        p_in: *p_in,
        p_eq: *p_eq,
        label_in: PhaseLabel::from_sigma(&s_in.sigma)?,
        label_eq: PhaseLabel::from_sigma(&s_eq.sigma)?,
        leg,
        dpt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SwitchPolicy {
    Fixed { t: f64 },
    /// Sample of minimal `Mhat` to the final target along the first leg.
    MinDistance,
    /// Time from which the envelope of `Mhat` stays flatter than `slope`
    /// per unit time.
    PlateauStart { slope: f64 },
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        SwitchPolicy::MinDistance
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PmeConfig {
    pub quench: QuenchConfig,
    pub policy: SwitchPolicy,
    pub threshold: f64,
    pub interpolation: Interpolation,
    /// Switch times are snapped to this grid, where checkpoints live.
    pub checkpoint_interval: f64,
}

impl Default for PmeConfig {
    fn default() -> Self {
        PmeConfig {
            quench: QuenchConfig::default(),
            policy: SwitchPolicy::default(),
            threshold: 1e-2,
            interpolation: Interpolation::Linear,
            checkpoint_interval: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PmeOutcome {
    pub t_sf: Relaxation,
    pub t_si: f64,
    pub t_if: Relaxation,
    pub pme_holds: bool,
    pub threshold: f64,
    /// `Mhat` of the start state, the common normalization.
    pub norm: f64,
    pub direct: QuenchLeg,
    pub leg1: QuenchLeg,
    pub leg2: QuenchLeg,
}

impl PmeOutcome {
    pub fn two_step_time(&self) -> Option<f64> {
        self.t_if.time().map(|t| self.t_si + t)
    }
}

/// `pme_holds` from the three times; an unrelaxed direct run counts as
/// infinitely slow, an unrelaxed second leg never wins.
pub fn pme_verdict(t_sf: Relaxation, t_si: f64, t_if: Relaxation) -> bool {
    match (t_sf, t_if) {
        (_, Relaxation::NotRelaxed) => false,
        (Relaxation::NotRelaxed, Relaxation::At(_)) => true,
        (Relaxation::At(sf), Relaxation::At(f)) => t_si + f < sf,
    }
}

/// Switch time chosen by `policy` from the first leg's `Mhat` to the final target.
pub fn select_switch_time(policy: SwitchPolicy, mhat_to_final: &DistanceSeries) -> Result<f64> {
    let (t, v) = (&mhat_to_final.times, &mhat_to_final.values);
    if t.is_empty() {
        return Err(Error::InvalidParams("empty first leg".into()));
    }
    match policy {
        SwitchPolicy::Fixed { t } => Ok(t),
        SwitchPolicy::MinDistance => {
            let k = v
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap();
            Ok(t[k])
        }
        SwitchPolicy::PlateauStart { slope } => {
            let env = upper_envelope(mhat_to_final);
            // start of the final stretch over which the envelope stays flat
            let k = (1..t.len())
                .rev()
                .find(|&k| ((env.values[k] - env.values[k - 1]) / (t[k] - t[k - 1])).abs() >= slope)
                .unwrap_or(0);
            Ok(t[k])
        }
    }
}

/// Assembles the verdict from three legs that are already computed.
/// `leg2` starts at `t_si`; all `Mhat` are normalized by `direct`'s value at `t = 0`.
pub fn pme_from_legs(
    direct: QuenchLeg,
    leg1: QuenchLeg,
    leg2: QuenchLeg,
    t_si: f64,
    threshold: f64,
    interp: Interpolation,
) -> Result<PmeOutcome> {
    let norm = *direct.mhat.values.first().ok_or(Error::ZeroNormalization)?;
    let t_sf = if norm == 0.0 {
        Relaxation::At(0.0)
    } else {
        relaxation_time(&upper_envelope(&direct.normalized(norm)?), threshold, interp)?
    };
    let t_if = if norm == 0.0 {
        Relaxation::At(0.0)
    } else {
        match relaxation_time(&upper_envelope(&leg2.normalized(norm)?), threshold, interp)? {
            Relaxation::At(t) => Relaxation::At(t - t_si),
            Relaxation::NotRelaxed => Relaxation::NotRelaxed,
        }
    };
    Ok(PmeOutcome {
        pme_holds: pme_verdict(t_sf, t_si, t_if),
        t_sf,
        t_si,
        t_if,
        threshold,
        norm,
        direct,
        leg1,
        leg2,
    })
}

/// Direct quench `S -> F` against the two-step path `S -> A -> F`.
pub fn run_pme(
    s: &ModelParams,
    a: &ModelParams,
    f: &ModelParams,
    cfg: &PmeConfig,
    provider: &SteadyProvider,
) -> Result<PmeOutcome> {
    let q = &cfg.quench;
    let s_in = provider.get(s, q.seed)?;
    let s_a = provider.get(a, q.seed)?;
    let s_f = provider.get(f, q.seed)?;
    log::info!("PME direct leg");
    let direct = run_leg(&s_in.theta, 0.0, f, &s_f, Some(&s_in.theta), q)?;

    let snap = |t: f64| (t / cfg.checkpoint_interval).round() * cfg.checkpoint_interval;
    let leg1_cfg = |t_end: f64| QuenchConfig {
        evolution: EvolutionConfig { t_max: t_end, stop_at_steady: false, ..q.evolution.clone() },
        checkpoint_times: vec![t_end],
        ..q.clone()
    };
    let (t_si, leg1) = match cfg.policy {
        SwitchPolicy::Fixed { t } => {
            let t_si = snap(t);
            log::info!("PME first leg to t = {t_si}");
            (t_si, run_leg(&s_in.theta, 0.0, a, &s_a, Some(&s_in.theta), &leg1_cfg(t_si))?)
        }
        policy => {
            log::info!("PME first leg (switch search)");
            let probe = run_leg(&s_in.theta, 0.0, a, &s_a, Some(&s_in.theta), q)?;
            let orbit = TargetOrbit::new(&s_f.sigma)?;
            let to_final: Vec<f64> = probe
                .record
                .sigma_series
                .iter()
                .map(|s| {
                    let m = decompose_order_parameter(&DisplacementField::new(s.clone())?)?.m;
                    Ok(orbit.distance(&m).0)
                })
                .collect::<Result<_>>()?;
            let series = DistanceSeries::new("Mhat_F", probe.record.times.clone(), to_final);
            let t_si = snap(select_switch_time(policy, &series)?).max(cfg.checkpoint_interval);
            log::info!("PME switch at t = {t_si}; re-running first leg to the checkpoint");
            (t_si, run_leg(&s_in.theta, 0.0, a, &s_a, Some(&s_in.theta), &leg1_cfg(t_si))?)
        }
    };
    let theta_si = leg1
        .record
        .checkpoint(t_si, q.evolution.dt)
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoint at t = {t_si}")))?
        .clone();
    log::info!("PME second leg from t = {t_si}");
    let leg2 = run_leg(&theta_si, t_si, f, &s_f, Some(&s_in.theta), q)?;
    pme_from_legs(direct, leg1, leg2, t_si, cfg.threshold, cfg.interpolation)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QmeKind {
    None,
    TypeI,
    TypeII,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QmeCopy {
    pub p_in: (f64, f64),
    pub d_e: f64,
    pub pre_nu: Option<i64>,
    pub tau: Relaxation,
    /// `tau` at each of the robustness thresholds.
    pub tau_by_threshold: Vec<(f64, Relaxation)>,
    pub envelope: DistanceSeries,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QmePair {
    /// Copy indices ordered by parameter distance.
    pub closer: usize,
    pub farther: usize,
    pub kind: QmeKind,
    /// Times at which the farther copy's envelope drops below the closer one's.
    pub crossings: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QmeOutcome {
    pub copies: Vec<QmeCopy>,
    pub pairs: Vec<QmePair>,
    pub classification: QmeKind,
    /// Some copy did not relax within the horizon.
    pub partial: bool,
    /// The `tau` ordering is the same at every robustness threshold.
    pub ordering_stable: bool,
}

/// Descending order of `tau` (unrelaxed copies first).
pub fn tau_ordering(taus: &[Relaxation]) -> Vec<usize> {
    let key = |r: &Relaxation| r.time().unwrap_or(f64::INFINITY);
    let mut idx: Vec<usize> = (0..taus.len()).collect();
    idx.sort_by(|&a, &b| key(&taus[b]).total_cmp(&key(&taus[a])).then(a.cmp(&b)));
    idx
}

/// Compares two envelopes sampled on the same grid. Samples where both
/// envelopes are below `floor` are ignored.
pub fn compare_envelopes(closer: &DistanceSeries, farther: &DistanceSeries, floor: f64) -> (QmeKind, Vec<f64>) {
    let n = closer.values.len().min(farther.values.len());
    let mut signs = Vec::new();
    for k in 0..n {
        let (c, f) = (closer.values[k], farther.values[k]);
        if c < floor && f < floor {
            break;
        }
        signs.push((closer.times[k], (f - c).partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal)));
    }
    use std::cmp::Ordering::*;
    let mut crossings = Vec::new();
    for w in signs.windows(2) {
        if w[0].1 != Less && w[1].1 == Less {
            crossings.push(w[1].0);
        }
    }
    let kind = if signs.is_empty() || signs.iter().all(|s| s.1 != Less) {
        QmeKind::None
    } else if signs.iter().all(|s| s.1 == Less) {
        QmeKind::TypeI
    } else if signs.last().is_some_and(|s| s.1 == Less) {
        QmeKind::TypeII
    } else {
        QmeKind::None
    };
    (kind, crossings)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QmeConfig {
    pub quench: QuenchConfig,
    pub threshold: f64,
    pub robustness_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
}

impl Default for QmeConfig {
    fn default() -> Self {
        QmeConfig {
            quench: QuenchConfig::default(),
            threshold: 1e-2,
            robustness_thresholds: vec![3e-3, 1e-2, 3e-2],
            interpolation: Interpolation::Linear,
        }
    }
}

/// Builds the QME verdict from already computed quench legs, one per copy.
pub fn qme_from_legs(initial: &[ModelParams], pre: &[PhaseLabel], legs: &[QuenchLeg], target: &ModelParams, cfg: &QmeConfig) -> Result<QmeOutcome> {
    let mut copies = Vec::with_capacity(legs.len());
    for ((p, label), leg) in initial.iter().zip(pre).zip(legs) {
        let envelope = upper_envelope(&leg.mhat);
        let tau = relaxation_time(&envelope, cfg.threshold, cfg.interpolation)?;
        let tau_by_threshold = cfg
            .robustness_thresholds
            .iter()
            .map(|&th| Ok((th, relaxation_time(&envelope, th, cfg.interpolation)?)))
            .collect::<Result<Vec<_>>>()?;
        copies.push(QmeCopy {
            p_in: p.point(),
            d_e: euclidean_param_distance(&[p.mu, p.g], &[target.mu, target.g])?,
            pre_nu: label.dominant_nu,
            tau,
            tau_by_threshold,
            envelope,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..copies.len() {
        for k in (i + 1)..copies.len() {
            let (c, f) = if copies[i].d_e <= copies[k].d_e { (i, k) } else { (k, i) };
            let floor = 1e-3 * cfg.threshold;
            let (kind, crossings) = compare_envelopes(&copies[c].envelope, &copies[f].envelope, floor);
            pairs.push(QmePair { closer: c, farther: f, kind, crossings });
        }
    }
    let classification = if pairs.iter().any(|p| p.kind == QmeKind::TypeII) {
        QmeKind::TypeII
    } else if pairs.iter().any(|p| p.kind == QmeKind::TypeI) {
        QmeKind::TypeI
    } else {
        QmeKind::None
    };
    let partial = copies.iter().any(|c| c.tau == Relaxation::NotRelaxed);
    let orderings: Vec<Vec<usize>> = (0..cfg.robustness_thresholds.len())
        .map(|j| tau_ordering(&copies.iter().map(|c| c.tau_by_threshold[j].1).collect::<Vec<_>>()))
        .collect();
    let ordering_stable = orderings.windows(2).all(|w| w[0] == w[1]);
    Ok(QmeOutcome { copies, pairs, classification, partial, ordering_stable })
}

/// Quenches each initial steady state to `target` and compares relaxation.
pub fn run_qme(
    initial: &[ModelParams],
    target: &ModelParams,
    cfg: &QmeConfig,
    provider: &SteadyProvider,
) -> Result<QmeOutcome> {
    if initial.len() < 2 {
        return Err(Error::InvalidParams("QME needs at least two copies".into()));
    }
    let s_eq = provider.get(target, cfg.quench.seed)?;
    let mut legs = Vec::new();
    let mut pre = Vec::new();
    for p in initial {
        let s_in = provider.get(p, cfg.quench.seed)?;
        log::info!("QME copy from ({}, {})", p.mu, p.g);
        legs.push(run_leg(&s_in.theta, 0.0, target, &s_eq, Some(&s_in.theta), &cfg.quench)?);
        pre.push(PhaseLabel::from_sigma(&s_in.sigma)?);
    }
    qme_from_legs(initial, &pre, &legs, target, cfg)
}
