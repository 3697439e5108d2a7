//! Diagnostics: Fourier harmonics of the order parameter, order-parameter
//! and parameter distances, Gaussian fidelities, correlation-matrix trace
//! distance, upper envelopes, relaxation times and dynamical-phase-transition
//! detection.

use std::f64::consts::PI;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};

/// Fourier amplitudes `mhat(nu)` for `nu = -L/2 .. L/2 - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicSpectrum {
    mhat: Vec<c64>,
}

impl HarmonicSpectrum {
    pub fn from_amplitudes(mhat: Vec<c64>) -> Self {
        HarmonicSpectrum { mhat }
    }

    pub fn zeros(l: usize) -> Self {
        HarmonicSpectrum {
            mhat: vec![c64::new(0.0, 0.0); l],
        }
    }

    pub fn len(&self) -> usize {
        self.mhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mhat.is_empty()
    }

    pub fn nu_min(&self) -> i64 {
        -(self.len() as i64 / 2)
    }

    /// All `nu` in storage order.
    pub fn nus(&self) -> impl Iterator<Item = i64> + '_ {
        let lo = self.nu_min();
        (0..self.len() as i64).map(move |k| lo + k)
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.mhat
    }

    /// `mhat(nu)` with `nu` taken modulo `L`.
    pub fn get(&self, nu: i64) -> c64 {
        let l = self.len() as i64;
        let k = (nu - self.nu_min()).rem_euclid(l);
        self.mhat[k as usize]
    }

    pub fn max_modulus(&self) -> f64 {
        self.mhat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Amplitudes for `|nu| <= nu_max`, ordered `-nu_max ..= nu_max`.
    pub fn window(&self, nu_max: usize) -> Vec<c64> {
        let n = nu_max as i64;
        (-n..=n).map(|nu| self.get(nu)).collect()
    }
}

/// Direct DFT `mhat(nu) = (1/L) sum_{j=1..L} exp(-2 pi i nu j / L) m_j`,
/// with the stored profile index `i` standing for site `j = i + 1`.
pub fn harmonics(m: &[f64]) -> HarmonicSpectrum {
    let l = m.len();
    let lf = l as f64;
    let lo = -(l as i64 / 2);
    let mhat = (0..l as i64)
        .map(|k| {
            let nu = (lo + k) as f64;
            let mut acc = c64::new(0.0, 0.0);
            for (i, &mi) in m.iter().enumerate() {
                let j = (i + 1) as f64;
                acc += c64::cis(-2.0 * PI * nu * j / lf) * mi;
            }
            acc / lf
        })
        .collect();
    HarmonicSpectrum { mhat }
}

/// Pair weight used to rank harmonics: `|mhat(0)|` for the uniform mode and
/// `|mhat(nu)| + |mhat(-nu)|` for `0 < nu`.
fn pair_weight(s: &HarmonicSpectrum, nu: i64) -> f64 {
    let l = s.len() as i64;
    if nu == 0 || 2 * nu == l {
        s.get(nu).norm()
    } else {
        s.get(nu).norm() + s.get(-nu).norm()
    }
}

/// Dominant harmonic `nu >= 0` and `|mhat(nu)|`; ties go to the smaller `nu`.
pub fn dominant_harmonic(s: &HarmonicSpectrum) -> (i64, f64) {
    let mut best = (0i64, pair_weight(s, 0));
    for nu in 1..=(s.len() as i64 / 2) {
        let w = pair_weight(s, nu);
        if w > best.1 * (1.0 + 1e-12) + 1e-300 {
            best = (nu, w);
        }
    }
    (best.0, s.get(best.0).norm())
}

/// `sqrt(sum_nu |mhat_t - mhat_eq|^2)`, divided by the same quantity for
/// `mhat_0` when `normalized`.
pub fn order_distance(
    mhat_t: &HarmonicSpectrum,
    mhat_eq: &HarmonicSpectrum,
    mhat_0: &HarmonicSpectrum,
    normalized: bool,
) -> Result<f64> {
    let num = spectral_distance(mhat_t, mhat_eq)?;
    if !normalized {
        return Ok(num);
    }
    let den = spectral_distance(mhat_0, mhat_eq)?;
    if den == 0.0 {
        return Err(Error::ZeroNormalization);
    }
    Ok(num / den)
}

/// Unnormalized `Mhat = sqrt(sum_nu |a(nu) - b(nu)|^2)`.
pub fn spectral_distance(a: &HarmonicSpectrum, b: &HarmonicSpectrum) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(a.mhat
        .iter()
        .zip(&b.mhat)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Euclidean distance between two parameter tuples, e.g. `(mu, g)`.
pub fn euclidean_param_distance(p_in: &[f64], p_eq: &[f64]) -> Result<f64> {
    if p_in.len() != p_eq.len() {
        return Err(Error::DimensionMismatch {
            expected: p_eq.len(),
            got: p_in.len(),
        });
    }
    Ok(p_in
        .iter()
        .zip(p_eq)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

const FIDELITY_TOL: f64 = 1e-8;

/// Gaussian-state overlap `Tr[rho_t rho_ref] = det(1 - theta_t - theta_ref + 2 theta_t theta_ref)`.
pub fn fidelity(theta_t: &CorrelationMatrix, theta_ref: &CorrelationMatrix) -> Result<f64> {
    let l = theta_t.len();
    if theta_ref.len() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            got: theta_ref.len(),
        });
    }
    let a = theta_t.as_mat();
    let b = theta_ref.as_mat();
    let prod = a * b;
    let m = Mat::<c64>::from_fn(l, l, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        c64::new(id, 0.0) - a[(i, j)] - b[(i, j)] + prod[(i, j)] * 2.0
    });
    let det = determinant(m);
    if det.im.abs() > FIDELITY_TOL || !det.re.is_finite() {
        return Err(Error::Invariant {
            time: f64::NAN,
            detail: format!("fidelity determinant not real: {det}"),
        });
    }
    if det.re < -FIDELITY_TOL || det.re > 1.0 + FIDELITY_TOL {
        return Err(Error::Invariant {
            time: f64::NAN,
            detail: format!("fidelity {} outside [0, 1]", det.re),
        });
    }
    Ok(det.re.clamp(0.0, 1.0))
}

/// Gaussian elimination with partial pivoting; exact zero for singular
/// input, where faer's determinant yields NaN.
fn determinant(mut m: Mat<c64>) -> c64 {
    let n = m.nrows();
    let mut det = c64::new(1.0, 0.0);
    for k in 0..n {
        let p = (k..n).max_by(|&a, &b| m[(a, k)].norm().total_cmp(&m[(b, k)].norm())).unwrap();
        let pivot = m[(p, k)];
        if pivot.norm() == 0.0 {
            return c64::new(0.0, 0.0);
        }
        if p != k {
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            det = -det;
        }
        det *= pivot;
        for i in k + 1..n {
            let f = m[(i, k)] / pivot;
            if f.norm() != 0.0 {
                for j in k + 1..n {
                    let t = m[(k, j)];
                    m[(i, j)] -= f * t;
                }
            }
        }
    }
    det
}

/// `(1/2) Tr |theta1 - theta2|`.
pub fn trace_distance_corr(theta1: &CorrelationMatrix, theta2: &CorrelationMatrix) -> Result<f64> {
    let l = theta1.len();
    if theta2.len() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            got: theta2.len(),
        });
    }
    let (a, b) = (theta1.as_mat(), theta2.as_mat());
    let mut diff = CorrelationMatrix::from_mat(Mat::from_fn(l, l, |i, j| a[(i, j)] - b[(i, j)]))?;
    diff.hermitize();
    Ok(0.5 * diff.eigenvalues()?.iter().map(|x| x.abs()).sum::<f64>())
}

/// A labelled scalar time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DistanceSeries {
    pub fn new(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len(), "series length mismatch");
        DistanceSeries {
            label: label.into(),
            times,
            values,
        }
    }
}

/// `env(t) = max_{s >= t} value(s)`, one reverse pass.
pub fn upper_envelope(series: &DistanceSeries) -> DistanceSeries {
    let mut values = series.values.clone();
    let mut run = f64::NEG_INFINITY;
    for v in values.iter_mut().rev() {
        run = run.max(*v);
        *v = run;
    }
    DistanceSeries {
        label: format!("{}_envelope", series.label),
        times: series.times.clone(),
        values,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Linear in `ln(value)`.
    SemiLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relaxation {
    At(f64),
    NotRelaxed,
}

impl Relaxation {
    pub fn time(&self) -> Option<f64> {
        match self {
            Relaxation::At(t) => Some(*t),
            Relaxation::NotRelaxed => None,
        }
    }
}

/// Earliest time the (non-increasing) envelope reaches `threshold`.
pub fn relaxation_time(
    envelope: &DistanceSeries,
    threshold: f64,
    interp: Interpolation,
) -> Result<Relaxation> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParams(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let (t, v) = (&envelope.times, &envelope.values);
    let Some(k) = v.iter().position(|&x| x <= threshold) else {
        return Ok(Relaxation::NotRelaxed);
    };
    if k == 0 {
        return Ok(Relaxation::At(t[0]));
    }
    let (t0, t1, v0, v1) = (t[k - 1], t[k], v[k - 1], v[k]);
    let frac = match interp {
        Interpolation::SemiLog if v1 > 0.0 && v0 > 0.0 => {
            (v0.ln() - threshold.ln()) / (v0.ln() - v1.ln())
        }
        _ => (v0 - threshold) / (v0 - v1),
    };
    Ok(Relaxation::At(t0 + frac.clamp(0.0, 1.0) * (t1 - t0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DptConfig {
    /// Window threshold relative to the final dominant amplitude.
    pub meta_rel: f64,
    /// Revival level relative to the final dominant amplitude.
    pub revival_rel: f64,
    /// Absolute amplitude below which the final state counts as disordered.
    pub disorder_threshold: f64,
    /// Accepted location of the largest backward-fidelity jump, as fractions of `t_star`.
    pub jump_window: (f64, f64),
}

impl Default for DptConfig {
    fn default() -> Self {
        DptConfig {
            meta_rel: 0.25,
            revival_rel: 0.5,
            disorder_threshold: 1e-3,
            jump_window: (0.5, 1.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DptReport {
    pub has_dpt: bool,
    pub t_star: Option<f64>,
    pub window: Option<(f64, f64)>,
    /// Final dominant harmonic and its modulus.
    pub final_nu: Option<i64>,
    pub final_amplitude: f64,
    /// Time of the largest single-sample jump of `F_bw`.
    pub fbw_jump_time: Option<f64>,
    /// The `F_bw` jump disagrees with `t_star`.
    pub ambiguous: bool,
}

/// Detects a DPT from harmonic moduli sampled at `times`.
///
/// `harm[k]` holds `mhat(nu, times[k])` for `nu = -nu_max ..= nu_max`.
pub fn detect_dpt(
    times: &[f64],
    harm: &[Vec<c64>],
    fbw: Option<(&[f64], &[f64])>,
    config: &DptConfig,
) -> DptReport {
    let mut report = DptReport {
        has_dpt: false,
        t_star: None,
        window: None,
        final_nu: None,
        final_amplitude: 0.0,
        fbw_jump_time: None,
        ambiguous: false,
    };
    let Some(last) = harm.last() else {
        return report;
    };
    let nu_max = (last.len() / 2) as i64;
    let at = |row: &Vec<c64>, nu: i64| row[(nu + nu_max) as usize].norm();
    let max_mod = |row: &Vec<c64>| row.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let final_max = max_mod(last);
    // dominant nu >= 0 by pair weight, ties to smaller nu
    let mut dom = (0i64, at(last, 0));
    for nu in 1..=nu_max {
        let w = at(last, nu) + at(last, -nu);
        if w > dom.1 * (1.0 + 1e-12) + 1e-300 {
            dom = (nu, w);
        }
    }
    report.final_nu = Some(dom.0);
    report.final_amplitude = at(last, dom.0);

    if let Some((ft, fv)) = fbw {
        let mut best: Option<(f64, f64)> = None;
        for k in 1..fv.len() {
            let jump = (fv[k] - fv[k - 1]).abs();
            if best.is_none_or(|(_, b)| jump > b) {
                best = Some((ft[k], jump));
            }
        }
        report.fbw_jump_time = best.map(|(t, _)| t);
    }

    if final_max < config.disorder_threshold {
        return report;
    }
    let meta = config.meta_rel * final_max;
    // longest run of samples with every |mhat| below `meta`
    let mut longest: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for (k, row) in harm.iter().enumerate() {
        if max_mod(row) < meta {
            start.get_or_insert(k);
        } else if let Some(s) = start.take() {
            if longest.is_none_or(|(a, b)| times[k - 1] - times[s] > times[b] - times[a]) {
                longest = Some((s, k - 1));
            }
        }
    }
    if let Some(s) = start {
        let e = harm.len() - 1;
        if longest.is_none_or(|(a, b)| times[e] - times[s] > times[b] - times[a]) {
            longest = Some((s, e));
        }
    }
    let Some((a, b)) = longest else {
        return report;
    };
    report.window = Some((times[a], times[b]));
    let revival = config.revival_rel * report.final_amplitude;
    report.t_star = ((b + 1)..harm.len())
        .find(|&k| at(&harm[k], dom.0) > revival)
        .map(|k| times[k]);
    report.has_dpt = report.t_star.is_some();
    if let (Some(ts), Some(tj)) = (report.t_star, report.fbw_jump_time) {
        let (lo, hi) = config.jump_window;
        report.ambiguous = !(tj >= lo * ts && tj <= hi * ts);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum_with(l: usize, entries: &[(i64, c64)]) -> HarmonicSpectrum {
        let mut s = HarmonicSpectrum::zeros(l);
        for &(nu, z) in entries {
            let k = (nu - s.nu_min()) as usize;
            s.mhat[k] = z;
        }
        s
    }

    #[test]
    fn uniform_profile_has_only_zero_mode() {
        let s = harmonics(&[0.3; 10]);
        assert!((s.get(0) - c64::new(0.3, 0.0)).norm() < 1e-15);
        for nu in s.nus().filter(|&n| n != 0) {
            assert!(s.get(nu).norm() < 1e-15);
        }
        assert_eq!(dominant_harmonic(&s).0, 0);
    }

    #[test]
    fn cosine_profile_splits_between_conjugate_modes() {
        let l = 100;
        let m: Vec<f64> = (0..l)
            .map(|i| (2.0 * PI * 4.0 * (i + 1) as f64 / l as f64).cos())
            .collect();
        let s = harmonics(&m);
        assert!((s.get(4).norm() - 0.5).abs() < 1e-12);
        assert!((s.get(-4).norm() - 0.5).abs() < 1e-12);
        for nu in s.nus().filter(|n| n.abs() != 4) {
            assert!(s.get(nu).norm() < 1e-12);
        }
        assert_eq!(dominant_harmonic(&s), (4, s.get(4).norm()));
    }

    #[test]
    fn single_mode_order_distance() {
        let l = 16;
        let eq = spectrum_with(l, &[(4, c64::new(0.2, 0.0)), (-4, c64::new(0.2, 0.0))]);
        let t = spectrum_with(l, &[(4, c64::new(0.3, 0.0)), (-4, c64::new(0.3, 0.0))]);
        let d = order_distance(&t, &eq, &t, false).unwrap();
        assert!((d - (2.0f64 * 0.01).sqrt()).abs() < 1e-15);
        assert!((d - 0.1414).abs() < 1e-4);
        assert_eq!(order_distance(&t, &eq, &t, true).unwrap(), 1.0);
        assert_eq!(order_distance(&eq, &eq, &t, false).unwrap(), 0.0);
        assert!(matches!(
            order_distance(&t, &eq, &eq, true),
            Err(Error::ZeroNormalization)
        ));
    }

    #[test]
    fn euclidean_reference_points() {
        let target = [0.5, 0.9];
        let d: Vec<f64> = [[0.5, 1.1], [0.8, 1.1], [0.5, 1.3], [0.25, 1.1]]
            .iter()
            .map(|p| euclidean_param_distance(p, &target).unwrap())
            .collect();
        assert!((d[0] - 0.2).abs() < 1e-12);
        assert!((d[1] - 0.13f64.sqrt()).abs() < 1e-12);
        assert!((d[2] - 0.4).abs() < 1e-12);
        assert!((d[3] - 0.1025f64.sqrt()).abs() < 1e-12);
        assert!(d[0] < d[3] && d[3] < d[1] && d[1] < d[2]);
        assert_eq!(euclidean_param_distance(&target, &target).unwrap(), 0.0);
    }

    #[test]
    fn fidelity_of_pure_states() {
        let p = CorrelationMatrix::from_real(&Mat::from_fn(4, 4, |i, j| if i == j && i % 2 == 0 { 1.0 } else { 0.0 }));
        assert!((fidelity(&p, &p).unwrap() - 1.0).abs() < 1e-14);
        let zero = CorrelationMatrix::zeros(4);
        let id = CorrelationMatrix::scaled_identity(4, 1.0);
        assert_eq!(fidelity(&zero, &id).unwrap(), 0.0);
    }

    #[test]
    fn trace_distance_examples() {
        let a = CorrelationMatrix::from_real(&Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 }));
        let b = CorrelationMatrix::from_real(&Mat::from_fn(2, 2, |i, j| if i == 1 && j == 1 { 1.0 } else { 0.0 }));
        assert!((trace_distance_corr(&a, &b).unwrap() - 1.0).abs() < 1e-14);
        assert!(trace_distance_corr(&a, &a).unwrap().abs() < 1e-14);
    }

    #[test]
    fn envelope_examples() {
        let s = DistanceSeries::new("M", vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.2, 0.6, 0.1]);
        assert_eq!(upper_envelope(&s).values, vec![1.0, 0.6, 0.6, 0.1]);
        let mono = DistanceSeries::new("M", vec![0.0, 1.0, 2.0], vec![3.0, 2.0, 2.0]);
        assert_eq!(upper_envelope(&mono).values, mono.values);
    }

    #[test]
    fn relaxation_time_examples() {
        let env = DistanceSeries::new("e", vec![0.0, 10.0], vec![1.0, 0.001]);
        let Relaxation::At(t) = relaxation_time(&env, 0.01, Interpolation::Linear).unwrap() else {
            panic!()
        };
        assert!((t - 10.0 * 0.99 / 0.999).abs() < 1e-12);
        assert!((t - 9.91).abs() < 1e-2);
        let Relaxation::At(ts) = relaxation_time(&env, 0.01, Interpolation::SemiLog).unwrap() else {
            panic!()
        };
        assert!((ts - 10.0 * 2.0 / 3.0).abs() < 1e-12);

        let low = DistanceSeries::new("e", vec![0.0, 1.0], vec![0.005, 0.001]);
        assert_eq!(relaxation_time(&low, 0.01, Interpolation::Linear).unwrap(), Relaxation::At(0.0));
        let high = DistanceSeries::new("e", vec![0.0, 1.0], vec![1.0, 0.5]);
        assert_eq!(relaxation_time(&high, 0.01, Interpolation::Linear).unwrap(), Relaxation::NotRelaxed);
        assert!(relaxation_time(&high, 0.0, Interpolation::Linear).is_err());
    }

    fn row(nu_max: usize, entries: &[(i64, f64)]) -> Vec<c64> {
        let mut r = vec![c64::new(0.0, 0.0); 2 * nu_max + 1];
        for &(nu, a) in entries {
            r[(nu + nu_max as i64) as usize] = c64::new(a, 0.0);
            r[(-nu + nu_max as i64) as usize] = c64::new(a, 0.0);
        }
        r
    }

    #[test]
    fn synthetic_dpt_detected() {
        // nu=4 decays, long quiet window, nu=7 revives around t = 60
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let harm: Vec<Vec<c64>> = times
            .iter()
            .map(|&t| {
                let a4 = 0.2 * (-t / 5.0).exp();
                let a7 = 0.2 / (1.0 + (-(t - 60.0) / 2.0).exp());
                row(10, &[(4, a4), (7, a7)])
            })
            .collect();
        let fbw: Vec<f64> = times.iter().map(|&t| if t < 61.0 { 0.1 } else { 0.9 }).collect();
        let r = detect_dpt(&times, &harm, Some((&times, &fbw)), &DptConfig::default());
        assert!(r.has_dpt);
        assert_eq!(r.final_nu, Some(7));
        let (a, b) = r.window.unwrap();
        assert!(a < 20.0 && b > 50.0 && b < 60.0, "{r:?}");
        let ts = r.t_star.unwrap();
        assert!((ts - 60.0).abs() <= 1.0, "{ts}");
        assert!(!r.ambiguous);
    }

    #[test]
    fn decay_to_disorder_is_not_a_dpt() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let harm: Vec<Vec<c64>> = times
            .iter()
            .map(|&t| row(10, &[(4, 0.2 * (-t / 5.0).exp())]))
            .collect();
        let r = detect_dpt(&times, &harm, None, &DptConfig::default());
        assert!(!r.has_dpt);
        assert!(r.window.is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_theta(l: usize, vals: &[f64]) -> CorrelationMatrix {
            // Hermitian matrix with spectrum in [0, 1] via a random unitary rotation
            let mut a = Mat::<c64>::from_fn(l, l, |i, j| c64::new(vals[(i * l + j) % vals.len()], vals[(j * l + i + 3) % vals.len()]));
            for i in 0..l { for j in 0..i { a[(i, j)] = a[(j, i)].conj(); } a[(i, i)].im = 0.0; }
            let evd = a.self_adjoint_eigen(faer::Side::Lower).unwrap();
            let u = evd.U();
            let occ: Vec<f64> = (0..l).map(|k| (vals[k % vals.len()] + 1.0) / 2.0).collect();
            let m = Mat::from_fn(l, l, |i, j| (0..l).map(|k| u[(i, k)] * u[(j, k)].conj() * occ[k]).sum());
            let mut t = CorrelationMatrix::from_mat(m).unwrap();
            t.hermitize();
            t
        }

        proptest! {
            #[test]
            fn parseval_and_conjugate_symmetry(m in proptest::collection::vec(-1.0f64..1.0, 1..=60usize)) {
                let mut m = m; if m.len() % 2 == 1 { m.push(0.1); }
                let l = m.len();
                let s = harmonics(&m);
                let lhs: f64 = s.amplitudes().iter().map(|z| z.norm_sqr()).sum();
                let rhs: f64 = m.iter().map(|x| x * x).sum::<f64>() / l as f64;
                prop_assert!((lhs - rhs).abs() < 1e-10);
                for nu in s.nus() {
                    prop_assert!((s.get(-nu) - s.get(nu).conj()).norm() < 1e-12);
                }
            }

            #[test]
            fn harmonics_linear(a in proptest::collection::vec(-1.0f64..1.0, 8), b in proptest::collection::vec(-1.0f64..1.0, 8), c in -2.0f64..2.0) {
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
                let (sa, sb, ss) = (harmonics(&a), harmonics(&b), harmonics(&sum));
                for nu in ss.nus() {
                    prop_assert!((ss.get(nu) - sa.get(nu) - sb.get(nu) * c).norm() < 1e-12);
                }
            }

            #[test]
            fn self_fidelity_is_gaussian_purity(vals in proptest::collection::vec(-1.0f64..1.0, 40)) {
                let t = random_theta(6, &vals);
                let purity: f64 = t.eigenvalues().unwrap().iter().map(|n| (1.0 - n).powi(2) + n * n).product();
                let f = fidelity(&t, &t).unwrap();
                prop_assert!((f - purity).abs() < 1e-10);
                prop_assert!((0.0..=1.0).contains(&f));
            }

            #[test]
            fn trace_distance_is_a_metric(v1 in proptest::collection::vec(-1.0f64..1.0, 40), v2 in proptest::collection::vec(-1.0f64..1.0, 40), v3 in proptest::collection::vec(-1.0f64..1.0, 40)) {
                let (a, b, c) = (random_theta(10, &v1), random_theta(10, &v2), random_theta(10, &v3));
                let ab = trace_distance_corr(&a, &b).unwrap();
                prop_assert!((ab - trace_distance_corr(&b, &a).unwrap()).abs() < 1e-12);
                prop_assert!(trace_distance_corr(&a, &a).unwrap() < 1e-12);
                prop_assert!(ab <= trace_distance_corr(&a, &c).unwrap() + trace_distance_corr(&c, &b).unwrap() + 1e-12);
            }

            #[test]
            fn envelope_dominates_and_decreases(v in proptest::collection::vec(0.0f64..5.0, 1..50usize)) {
                let t: Vec<f64> = (0..v.len()).map(|k| k as f64).collect();
                let env = upper_envelope(&DistanceSeries::new("x", t, v.clone()));
                for k in 0..v.len() {
                    prop_assert!(env.values[k] >= v[k]);
                    if k > 0 { prop_assert!(env.values[k] <= env.values[k - 1]); }
                }
            }

            #[test]
            fn order_distance_nonnegative(a in proptest::collection::vec(-1.0f64..1.0, 12), b in proptest::collection::vec(-1.0f64..1.0, 12)) {
                let (sa, sb) = (harmonics(&a), harmonics(&b));
                let d = order_distance(&sa, &sb, &sa, false).unwrap();
                prop_assert!(d >= 0.0);
                if a == b { prop_assert_eq!(d, 0.0); }
            }
        }
    }
}
