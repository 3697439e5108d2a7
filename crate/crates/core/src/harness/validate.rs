//! Self-checks run by the `validate` command: the many-body oracle
//! comparison, the two dissipator forms and the invariant suite.

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::correlation::CorrelationMatrix;
use crate::error::Result;
use crate::evolution::{dissipator_explicit, dissipator_matrix, evolve, oracle_small_l, EvolutionConfig, Observers};
use crate::initstate::{random_half_filled_theta, RandomInitSpec};
use crate::model::{build_hamiltonian, diagonalize, DisplacementField, ModelParams};
use crate::observables::{fidelity, harmonics, trace_distance_corr, upper_envelope, DistanceSeries};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured quantity next to its tolerance.
    pub detail: String,
}

impl Check {
    fn new(name: &str, value: f64, tol: f64, what: &str) -> Self {
        Check {
            name: name.to_string(),
            passed: value.is_finite() && value < tol,
            detail: format!("{what} {value:.3e} (tol {tol:.0e})"),
        }
    }
}

fn random_sigma(l: usize, amp: f64, rng: &mut ChaCha8Rng) -> DisplacementField {
    DisplacementField::new((0..l).map(|_| rng.random_range(-amp..=amp)).collect()).unwrap()
}

/// A stirred pure state mixed with the infinite-temperature state, so the
/// comparison exercises mixed Gaussian states.
fn mixed_theta(l: usize, seed: u64) -> Result<CorrelationMatrix> {
    let pure = random_half_filled_theta(l, &RandomInitSpec { epsilon: 0.4, seed, filling: 0.5 })?;
    let p = pure.as_mat();
    CorrelationMatrix::from_mat(Mat::from_fn(l, l, |i, j| {
        p[(i, j)] * 0.8 + if i == j { c64::new(0.1, 0.0) } else { c64::new(0.0, 0.0) }
    }))
}

/// Largest deviation between correlation-matrix evolution and exact
/// many-body evolution at frozen `sigma`, `L = 4`, over `t in [0, t_max]`.
pub fn oracle_deviation(mu: f64, seed: u64, t_max: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = random_sigma(4, 0.2, &mut rng);
    let params = ModelParams::new(4, 1.0, mu, 1.0, 0.01, 0.05)?;
    let theta0 = mixed_theta(4, seed)?;
    let cfg = EvolutionConfig {
        t_max,
        snapshot_stride: 10,
        stop_at_steady: false,
        frozen_sigma: Some(sigma.clone()),
        ..EvolutionConfig::default()
    };
    let obs = Observers { theta_sample_stride: Some(1), ..Observers::default() };
    let rec = evolve(&theta0, &params, &cfg, &obs)?;
    let grid: Vec<f64> = rec.theta_samples.iter().map(|(t, _)| *t).collect();
    let exact = oracle_small_l(&theta0, &sigma, &params, &grid)?;
    Ok(rec
        .theta_samples
        .iter()
        .zip(&exact)
        .map(|((_, a), b)| a.max_abs_diff(b))
        .fold(0.0, f64::max))
}

/// Largest relative difference of the two dissipator forms over `n` random instances.
pub fn dissipator_deviation(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..n {
        let l = [4, 6, 10][k % 3];
        let mu = rng.random_range(-1.0..1.0);
        let params = ModelParams::new(l, 1.0, mu, 1.0, rng.random_range(0.001..0.1), rng.random_range(0.02..1.0))?;
        let theta = mixed_theta(l, rng.random())?;
        let sd = diagonalize(&build_hamiltonian(&params, &random_sigma(l, 0.3, &mut rng))?)?;
        let a = dissipator_explicit(&theta, &sd, &params);
        let b = dissipator_matrix(&theta, &sd, &params);
        let diff = (&a - &b).norm_max();
        worst = worst.max(diff / b.norm_max().max(1e-300));
    }
    Ok(worst)
}

/// The invariant suite on small systems.
pub fn invariant_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // self-consistent run at the reference couplings on a short ring
    let params = ModelParams::new(20, 1.0, 0.5, 1.1, 0.01, 0.05)?;
    let theta0 = random_half_filled_theta(20, &RandomInitSpec::with_seed(1))?;
    let cfg = EvolutionConfig { t_max: 50.0, check_every: 100, stop_at_steady: false, ..EvolutionConfig::default() };
    let obs = Observers { theta_sample_stride: Some(1), ..Observers::default() };
    let rec = evolve(&theta0, &params, &cfg, &obs)?;
    let herm = rec.theta_samples.iter().map(|(_, t)| t.hermiticity_error()).fold(0.0, f64::max);
    out.push(Check::new("hermiticity drift", herm, 1e-8, "max |theta - theta^dag|"));
    let mut excursion = 0.0f64;
    for (_, t) in &rec.theta_samples {
        let ev = t.eigenvalues()?;
        excursion = excursion.max(-ev[0]).max(ev[ev.len() - 1] - 1.0);
    }
    out.push(Check::new("occupation bounds", excursion.max(0.0), 1e-6, "max excursion outside [0,1]"));

    let m: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = harmonics(&m);
    let lhs: f64 = s.amplitudes().iter().map(|z| z.norm_sqr()).sum();
    let rhs: f64 = m.iter().map(|x| x * x).sum::<f64>() / 100.0;
    out.push(Check::new("Parseval", (lhs - rhs).abs(), 1e-10, "|sum |mhat|^2 - mean m^2|"));

    let mut fid_range = 0.0f64;
    let mut purity = 0.0f64;
    for k in 0..20 {
        let a = mixed_theta(8, 100 + k)?;
        let b = mixed_theta(8, 200 + k)?;
        let f = fidelity(&a, &b)?;
        fid_range = fid_range.max(-f).max(f - 1.0);
        let ev = a.eigenvalues()?;
        let prod: f64 = ev.iter().map(|n| (1.0 - n).powi(2) + n * n).product();
        purity = purity.max((fidelity(&a, &a)? - prod).abs());
    }
    out.push(Check::new("fidelity range", fid_range.max(0.0), 1e-12, "excursion outside [0,1]"));
    out.push(Check::new("fidelity purity identity", purity, 1e-10, "|F(theta,theta) - prod|"));

    let mut metric = 0.0f64;
    for k in 0..20 {
        let (a, b, c) = (mixed_theta(10, k)?, mixed_theta(10, 50 + k)?, mixed_theta(10, 90 + k)?);
        let (ab, ba) = (trace_distance_corr(&a, &b)?, trace_distance_corr(&b, &a)?);
        let (ac, cb) = (trace_distance_corr(&a, &c)?, trace_distance_corr(&c, &b)?);
        metric = metric
            .max((ab - ba).abs())
            .max(trace_distance_corr(&a, &a)?)
            .max((ab - ac - cb).max(0.0))
            .max(-ab);
    }
    out.push(Check::new("trace-distance metric axioms", metric, 1e-12, "worst violation"));

    let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
    let values: Vec<f64> = times.iter().map(|t| (-0.02 * t).exp() * (1.0 + 0.5 * (0.3 * t).sin())).collect();
    let env = upper_envelope(&DistanceSeries::new("x", times, values.clone()));
    let mono = env.values.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max);
    let below = env.values.iter().zip(&values).map(|(e, v)| (v - e).max(0.0)).fold(0.0, f64::max);
    out.push(Check::new("envelope monotonicity", mono.max(below), 1e-300, "worst violation"));

    let theta = &rec.final_theta;
    let (back, t) = checkpoint::decode(&checkpoint::encode(theta, rec.final_time))?;
    let exact = t.to_bits() == rec.final_time.to_bits()
        && (0..20).all(|i| {
            (0..20).all(|j| {
                let (x, y) = (theta.as_mat()[(i, j)], back.as_mat()[(i, j)]);
                x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()
            })
        });
    out.push(Check {
        name: "checkpoint round trip".into(),
        passed: exact,
        detail: if exact { "bit-exact".into() } else { "mismatch".into() },
    });

    let points: Vec<f64> = (0..6).map(|k| 0.1 * k as f64).collect();
    let job = |mu: &f64, seed: u64| -> Result<Vec<u64>> {
        let p = ModelParams::new(6, 1.0, *mu, 0.8, 0.1, 0.1)?;
        let t0 = random_half_filled_theta(6, &RandomInitSpec::with_seed(seed))?;
        let c = EvolutionConfig { t_max: 5.0, stop_at_steady: false, ..EvolutionConfig::default() };
        let r = evolve(&t0, &p, &c, &Observers::default())?;
        let m = r.final_theta.as_mat();
        Ok((0..6).flat_map(|i| (0..6).map(move |j| m[(i, j)].re.to_bits())).collect())
    };
    let one = super::sweep::sweep_executor(&points, 9, 1, job)?;
    let four = super::sweep::sweep_executor(&points, 9, 4, job)?;
    let same = one.iter().zip(&four).all(|(a, b)| a.outcome == b.outcome && a.seed == b.seed);
    out.push(Check {
        name: "sweep determinism across worker counts".into(),
        passed: same,
        detail: if same { "identical for 1 and 4 workers".into() } else { "results differ".into() },
    });
    Ok(out)
}

/// Everything `validate` runs, in order.
pub fn run_validation() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for mu in [0.0, 0.5] {
        for seed in [1, 2] {
            worst = worst.max(oracle_deviation(mu, seed, 50.0)?);
        }
    }
    checks.push(Check::new("oracle equivalence (L=4, t<=50)", worst, 1e-6, "max |theta - theta_exact|"));
    checks.push(Check::new("dissipator forms", dissipator_deviation(100, 7)?, 1e-12, "max relative difference"));
    checks.extend(invariant_checks()?);
    Ok(checks)
}

/// Fixed-width pass/fail table.
pub fn format_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    checks
        .iter()
        .map(|c| format!("{:<width$}  {}  {}\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail))
        .collect()
}
