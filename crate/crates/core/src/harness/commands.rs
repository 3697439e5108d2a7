//! The CLI commands, each writing its artifacts plus a manifest into the
//! configured output directory.

use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::output::{write_json, write_series, write_timeseries, ManifestBuilder, Timeseries};
use super::validate;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::decompose_order_parameter;
use crate::observables::{self, DptReport, Relaxation};
use crate::protocols::{
    classify_steady_state, run_pme, run_qme, run_quench, scan_phase_diagram, PhaseLabel, QuenchLeg, TargetReference,
    SteadyProvider,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Scan,
    Steady,
    Quench,
    Pme,
    Qme,
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Scan => "scan",
            Command::Steady => "steady",
            Command::Quench => "quench",
            Command::Pme => "pme",
            Command::Qme => "qme",
            Command::Validate => "validate",
        }
    }
}

/// 0 on success, 1 on a physics-invariant violation or other runtime
/// failure, 2 on a configuration error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParams(_) | Error::OddLattice(_) | Error::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}

fn provider(cfg: &RunConfig) -> SteadyProvider {
    let p = SteadyProvider::new(cfg.steady_evolution(), cfg.init_spec());
    match &cfg.cache_dir {
        Some(dir) => p.with_cache_dir(dir),
        None => p,
    }
}

/// Runs `cmd`; returns whether every check passed (always true except for
/// `validate`).
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<bool> {
    let workers = cfg.workers();
    let mut manifest = ManifestBuilder::new(&cfg.output_dir, cmd.name(), cfg.to_toml(), Vec::new(), workers)?;
    log::info!("{} -> {}", cmd.name(), cfg.output_dir.display());
    let ok = match cmd {
        Command::Steady => steady(cfg, &mut manifest)?,
        Command::Scan => scan(cfg, &mut manifest, workers)?,
        Command::Quench => quench(cfg, &mut manifest)?,
        Command::Pme => pme(cfg, &mut manifest)?,
        Command::Qme => qme(cfg, &mut manifest)?,
        Command::Validate => validate_cmd(&mut manifest)?,
    };
    let m = manifest.finish()?;
    log::info!("wrote {} files in {:.1} s", m.files.len(), m.wall_time_s);
    Ok(ok)
}

#[derive(Serialize)]
struct SteadyReport {
    mu: f64,
    g: f64,
    label: PhaseLabel,
    frustrated: bool,
    seeds: Vec<SeedReport>,
}

#[derive(Serialize)]
struct SeedReport {
    seed: u64,
    label: PhaseLabel,
    converged: bool,
    delta_j: f64,
    max_harmonic: f64,
}

fn steady(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<bool> {
    let params = cfg.base_params();
    let prov = provider(cfg);
    let class = classify_steady_state(&params, &prov, &cfg.steady.seeds)?;
    let mut seeds = Vec::new();
    for s in &class.per_seed {
        let r = prov.get(&params, s.seed)?;
        let profile = decompose_order_parameter(&r.sigma)?;
        let spec = observables::harmonics(&profile.m);
        let mut csv = String::from("j,sigma,m\n");
        for (j, (sig, m)) in r.sigma.as_slice().iter().zip(&profile.m).enumerate() {
            csv.push_str(&format!("{j},{},{}\n", super::output::format_float(*sig), super::output::format_float(*m)));
        }
        checkpoint::write_atomic(&manifest.path(&format!("profile_seed{}.csv", s.seed)), csv.as_bytes())?;
        checkpoint::write(&manifest.path(&format!("theta_seed{}.gnth", s.seed)), &r.theta, r.effort)?;
        seeds.push(SeedReport {
            seed: s.seed,
            label: s.label,
            converged: s.converged,
            delta_j: profile.delta_j,
            max_harmonic: spec.max_modulus(),
        });
    }
    manifest.add_seeds(class.per_seed.iter().map(|s| s.seed));
    let report = SteadyReport { mu: params.mu, g: params.g, label: class.label, frustrated: class.frustrated, seeds };
    write_json(&report, &manifest.path("steady.json"))?;
    log::info!("steady state at ({}, {}): {}", params.mu, params.g, class.label);
    Ok(true)
}

fn scan(cfg: &RunConfig, manifest: &mut ManifestBuilder, workers: usize) -> Result<bool> {
    let prov = provider(cfg);
    let map = scan_phase_diagram(&cfg.scan.mu, &cfg.scan.g, &cfg.base_params(), &prov, cfg.master_seed, workers)?;
    let mut csv = String::from("mu,g,label,kind,dominant_nu,amplitude,frustrated,seed\n");
    for p in &map.points {
        match (&p.label, &p.error) {
            (Some(l), _) => csv.push_str(&format!(
                "{},{},{},{:?},{},{},{},{}\n",
                p.mu,
                p.g,
                l,
                l.kind,
                l.dominant_nu.map(|n| n.to_string()).unwrap_or_default(),
                super::output::format_float(l.amplitude),
                p.frustrated,
                p.seed
            )),
            (None, e) => {
                manifest.fail(format!("point ({}, {})", p.mu, p.g), e.clone().unwrap_or_default());
                csv.push_str(&format!("{},{},FAILED,,,,,{}\n", p.mu, p.g, p.seed));
            }
        }
    }
    manifest.add_seeds(map.points.iter().map(|p| p.seed));
    checkpoint::write_atomic(&manifest.path("phase_map.csv"), csv.as_bytes())?;
    write_json(&map, &manifest.path("phase_map.json"))?;
    Ok(true)
}

fn leg_timeseries(leg: &QuenchLeg, norm: Option<f64>) -> Timeseries {
    let mut ts = Timeseries::from_record(&leg.record).with_scalar("Mhat", leg.mhat.values.clone());
    if let Some(n) = norm.filter(|n| *n > 0.0) {
        ts = ts.with_scalar("M", leg.mhat.values.iter().map(|v| v / n).collect());
    }
    ts
}

#[derive(Serialize)]
struct QuenchReport<'a> {
    from: (f64, f64),
    to: (f64, f64),
    label_in: String,
    label_eq: String,
    final_time: f64,
    steady: bool,
    reference: TargetReference,
    dpt: &'a DptReport,
    t_star: Option<f64>,
}

fn quench(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<bool> {
    let (p_in, p_eq) = (cfg.at(cfg.quench.from), cfg.at(cfg.quench.to));
    let out = run_quench(&p_in, &p_eq, &cfg.quench_config(), &provider(cfg))?;
    let leg = &out.leg;
    write_timeseries(&leg_timeseries(leg, leg.mhat.values.first().copied()), &manifest.path("timeseries.csv"))?;
    write_series("F_bw", &leg.f_bw.times, &leg.f_bw.values, &manifest.path("fbw.csv"))?;
    for (t, th) in &leg.record.checkpoints {
        checkpoint::write(&manifest.path(&format!("checkpoint_t{t}.gnth")), th, *t)?;
    }
    manifest.add_seeds([cfg.quench.seed]);
    let report = QuenchReport {
        from: p_in.point(),
        to: p_eq.point(),
        label_in: out.label_in.to_string(),
        label_eq: out.label_eq.to_string(),
        final_time: leg.record.final_time,
        steady: leg.record.steady,
        reference: leg.reference,
        dpt: &out.dpt,
        t_star: out.dpt.t_star,
    };
    write_json(&report, &manifest.path("dpt.json"))?;
    log::info!("has_dpt = {}, t_star = {:?}", out.dpt.has_dpt, out.dpt.t_star);
    Ok(true)
}

#[derive(Serialize)]
struct PmeReport {
    s: (f64, f64),
    a: (f64, f64),
    f: (f64, f64),
    threshold: f64,
    t_sf: Relaxation,
    t_si: f64,
    t_if: Relaxation,
    two_step: Option<f64>,
    pme_holds: bool,
}

fn pme(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<bool> {
    let (s, a, f) = (cfg.at(cfg.pme.s), cfg.at(cfg.pme.a), cfg.at(cfg.pme.f));
    let out = run_pme(&s, &a, &f, &cfg.pme_config()?, &provider(cfg))?;
    for (name, leg) in [("direct", &out.direct), ("leg1", &out.leg1), ("leg2", &out.leg2)] {
        write_timeseries(&leg_timeseries(leg, Some(out.norm)), &manifest.path(&format!("{name}.csv")))?;
    }
    if let Some(th) = out.leg1.record.checkpoint(out.t_si, cfg.evolution.dt) {
        checkpoint::write(&manifest.path("switch.gnth"), th, out.t_si)?;
    }
    manifest.add_seeds([cfg.quench.seed]);
    let report = PmeReport {
        s: s.point(),
        a: a.point(),
        f: f.point(),
        threshold: out.threshold,
        t_sf: out.t_sf,
        t_si: out.t_si,
        t_if: out.t_if,
        two_step: out.two_step_time(),
        pme_holds: out.pme_holds,
    };
    write_json(&report, &manifest.path("pme.json"))?;
    log::info!("pme_holds = {}", out.pme_holds);
    Ok(true)
}

fn qme(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<bool> {
    let initial: Vec<_> = cfg.qme.initial.iter().map(|&p| cfg.at(p)).collect();
    let out = run_qme(&initial, &cfg.at(cfg.qme.target), &cfg.qme_config(), &provider(cfg))?;
    for (i, c) in out.copies.iter().enumerate() {
        write_series("Mhat_envelope", &c.envelope.times, &c.envelope.values, &manifest.path(&format!("copy{}_envelope.csv", i + 1)))?;
    }
    manifest.add_seeds([cfg.quench.seed]);
    write_json(&out, &manifest.path("qme.json"))?;
    Ok(true)
}

fn validate_cmd(manifest: &mut ManifestBuilder) -> Result<bool> {
    let checks = validate::run_validation()?;
    print!("{}", validate::format_table(&checks));
    write_json(&checks, &manifest.path("validate.json"))?;
    for c in checks.iter().filter(|c| !c.passed) {
        manifest.fail(c.name.clone(), c.detail.clone());
    }
    Ok(checks.iter().all(|c| c.passed))
}

/// Renders a CSV written by this crate as SVG: a heatmap for phase maps,
/// otherwise the selected columns against `t`.
pub fn plot(input: &Path, columns: &[String], log_y: bool, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    let svg = if header.contains(&"label") {
        let col = |name: &str| header.iter().position(|h| *h == name);
        let (imu, ig, il) = (col("mu").unwrap(), col("g").unwrap(), col("label").unwrap());
        let cells = text
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", input.display())));
                Ok((num(f[imu])?, num(f[ig])?, f[il].to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        super::plot::phase_map_svg(&cells)
    } else {
        let (header, rows) = super::output::read_csv(input)?;
        let wanted: Vec<String> = if columns.is_empty() { header.iter().skip(1).cloned().collect() } else { columns.to_vec() };
        let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut series = Vec::new();
        for name in &wanted {
            let k = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("no column `{name}` in {}", input.display())))?;
            series.push((name.clone(), xs.clone(), rows.iter().map(|r| r[k]).collect()));
        }
        let title = input.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        super::plot::line_plot(&title, &header[0], &series, log_y)
    };
    checkpoint::write_atomic(output, svg.as_bytes())
}
