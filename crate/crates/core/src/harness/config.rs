//! Run configuration: a TOML file with nested sections, patched by
//! `dotted.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::initstate::RandomInitSpec;
use crate::model::ModelParams;
use crate::observables::{DptConfig, Interpolation};
use crate::protocols::{production_evolution, PmeConfig, QmeConfig, QuenchConfig, SwitchPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub mu: f64,
    pub g: f64,
    pub gamma: f64,
    #[serde(rename = "kBT")]
    pub kbt: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::reference(0.5, 1.1);
        ModelSection { l: p.l, j: p.j, mu: p.mu, g: p.g, gamma: p.gamma, kbt: p.kbt }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        ModelParams { l: self.l, j: self.j, mu: self.mu, g: self.g, gamma: self.gamma, kbt: self.kbt }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadySection {
    /// Evolution horizon for steady-state preparation.
    pub t_max: f64,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub filling: f64,
}

impl Default for SteadySection {
    fn default() -> Self {
        SteadySection { t_max: 8000.0, seeds: vec![1, 2], epsilon: 0.05, filling: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub mu: Vec<f64>,
    pub g: Vec<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection { mu: vec![0.0, 0.5, 0.8], g: vec![0.9, 1.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuenchSection {
    /// `(mu, g)` before the quench.
    pub from: [f64; 2],
    /// `(mu, g)` after the quench.
    pub to: [f64; 2],
    pub seed: u64,
    pub theta_sample_interval: f64,
    pub checkpoint_times: Vec<f64>,
}

impl Default for QuenchSection {
    fn default() -> Self {
        QuenchSection {
            from: [0.5, 1.1],
            to: [0.8, 1.1],
            seed: 1,
            theta_sample_interval: 5.0,
            checkpoint_times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmeSection {
    #[serde(rename = "S")]
    pub s: [f64; 2],
    #[serde(rename = "A")]
    pub a: [f64; 2],
    #[serde(rename = "F")]
    pub f: [f64; 2],
    /// `fixed`, `min-distance` or `plateau-start`.
    pub policy: String,
    pub t_switch: f64,
    pub plateau_slope: f64,
    pub threshold: f64,
    pub checkpoint_interval: f64,
    pub interpolation: Interpolation,
}

impl Default for PmeSection {
    fn default() -> Self {
        PmeSection {
            s: [0.5, 1.1],
            a: [0.8, 1.1],
            f: [0.5, 0.9],
            policy: "fixed".into(),
            t_switch: 960.0,
            plateau_slope: 1e-5,
            threshold: 1e-2,
            checkpoint_interval: 1.0,
            interpolation: Interpolation::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmeSection {
    pub initial: Vec<[f64; 2]>,
    pub target: [f64; 2],
    pub threshold: f64,
    pub robustness: Vec<f64>,
    pub interpolation: Interpolation,
}

impl Default for QmeSection {
    fn default() -> Self {
        QmeSection {
            initial: vec![[0.5, 1.1], [0.8, 1.1], [0.5, 1.3], [0.25, 1.1]],
            target: [0.5, 0.9],
            threshold: 1e-2,
            robustness: vec![3e-3, 1e-2, 3e-2],
            interpolation: Interpolation::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Falls back to the `DGN_WORKERS` environment variable.
    pub workers: Option<usize>,
    pub master_seed: u64,
    /// Reuse steady states across runs.
    pub cache_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub evolution: EvolutionConfig,
    pub steady: SteadySection,
    pub scan: ScanSection,
    pub quench: QuenchSection,
    pub dpt: DptConfig,
    pub pme: PmeSection,
    pub qme: QmeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("dgn-out"),
            workers: None,
            master_seed: 1,
            cache_dir: None,
            model: ModelSection::default(),
            evolution: production_evolution(4000.0),
            steady: SteadySection::default(),
            scan: ScanSection::default(),
            quench: QuenchSection::default(),
            dpt: DptConfig::default(),
            pme: PmeSection::default(),
            qme: QmeSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Loads `path` (if any), applies overrides, deserializes and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(config_err)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Keys in `table` replace the defaults one by one, so a partial
    /// section keeps the remaining default values.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let mut merged = toml::Table::try_from(RunConfig::default()).map_err(config_err)?;
        merge(&mut merged, table);
        let cfg: RunConfig = toml::Value::Table(merged).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.params().validate().map_err(config_err)?;
        self.evolution.validate().map_err(config_err)?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.steady.seeds.is_empty() {
            return Err(Error::Config("steady.seeds is empty".into()));
        }
        if !(self.steady.t_max > 0.0) {
            return Err(Error::Config("steady.t_max must be positive".into()));
        }
        if !(self.steady.epsilon >= 0.0 && self.steady.epsilon < 0.5) {
            return Err(Error::Config("steady.epsilon must lie in [0, 0.5)".into()));
        }
        if !(self.steady.filling > 0.0 && self.steady.filling < 1.0) {
            return Err(Error::Config("steady.filling must lie in (0, 1)".into()));
        }
        if !(self.quench.theta_sample_interval > 0.0) {
            return Err(Error::Config("quench.theta_sample_interval must be positive".into()));
        }
        self.switch_policy()?;
        if !(self.pme.threshold > 0.0) || !(self.qme.threshold > 0.0) {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if !(self.pme.checkpoint_interval > 0.0) {
            return Err(Error::Config("pme.checkpoint_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn base_params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn at(&self, point: [f64; 2]) -> ModelParams {
        self.base_params().with_point(point[0], point[1])
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(super::sweep::default_workers)
    }

    pub fn steady_evolution(&self) -> EvolutionConfig {
        EvolutionConfig {
            t_max: self.steady.t_max,
            stop_at_steady: true,
            ..self.evolution.clone()
        }
    }

    pub fn init_spec(&self) -> RandomInitSpec {
        RandomInitSpec { epsilon: self.steady.epsilon, seed: 0, filling: self.steady.filling }
    }

    pub fn quench_config(&self) -> QuenchConfig {
        QuenchConfig {
            evolution: self.evolution.clone(),
            dpt: self.dpt,
            seed: self.quench.seed,
            theta_sample_interval: self.quench.theta_sample_interval,
            checkpoint_times: self.quench.checkpoint_times.clone(),
        }
    }

    pub fn switch_policy(&self) -> Result<SwitchPolicy> {
        match self.pme.policy.as_str() {
            "fixed" => Ok(SwitchPolicy::Fixed { t: self.pme.t_switch }),
            "min-distance" => Ok(SwitchPolicy::MinDistance),
            "plateau-start" => Ok(SwitchPolicy::PlateauStart { slope: self.pme.plateau_slope }),
            other => Err(Error::Config(format!(
                "pme.policy `{other}` is not one of fixed, min-distance, plateau-start"
            ))),
        }
    }

    pub fn pme_config(&self) -> Result<PmeConfig> {
        Ok(PmeConfig {
            quench: self.quench_config(),
            policy: self.switch_policy()?,
            threshold: self.pme.threshold,
            interpolation: self.pme.interpolation,
            checkpoint_interval: self.pme.checkpoint_interval,
        })
    }

    pub fn qme_config(&self) -> QmeConfig {
        QmeConfig {
            quench: self.quench_config(),
            threshold: self.qme.threshold,
            robustness_thresholds: self.qme.robustness.clone(),
            interpolation: self.qme.interpolation,
        }
    }

    /// The fully resolved configuration, as written into manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_point() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        let p = cfg.base_params();
        assert_eq!((p.l, p.j, p.gamma, p.kbt), (100, 1.0, 0.01, 0.05));
        assert_eq!(cfg.evolution.dt, 0.1);
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let cfg = RunConfig::load(None, &["evolution.t_max=10".into()]).unwrap();
        assert_eq!(cfg.evolution.rediag, crate::evolution::RediagMode::PerStep);
        assert_eq!(cfg.evolution.dt, 0.1);
        assert!(RunConfig::load(None, &["evolution.typo=1".into()]).is_err());
        assert!(RunConfig::load(None, &["dpt.typo=1".into()]).is_err());
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "model.L=20".into(),
                "model.mu=0.25".into(),
                "evolution.t_max=12.5".into(),
                "quench.to=[0.5, 0.9]".into(),
                "pme.policy=min-distance".into(),
                "output_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.l, 20);
        assert_eq!(cfg.model.mu, 0.25);
        assert_eq!(cfg.evolution.t_max, 12.5);
        assert_eq!(cfg.quench.to, [0.5, 0.9]);
        assert_eq!(cfg.switch_policy().unwrap(), SwitchPolicy::MinDistance);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[model]\nL = 40\ng = 0.9\n\n[evolution]\ndt = 0.025\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["model.g=1.3".into()]).unwrap();
        assert_eq!((cfg.model.l, cfg.model.g, cfg.evolution.dt), (40, 1.3, 0.025));
        // the echoed config parses back to the same value
        let back = RunConfig::from_table(cfg.to_toml().parse().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for bad in [
            vec!["model.L=7".to_string()],
            vec!["model.kBT=0".into()],
            vec!["evolution.dt=0.5".into()],
            vec!["nonsense.key=1".into()],
            vec!["model.typo=1".into()],
            vec!["pme.policy=sometimes".into()],
            vec!["noequals".into()],
        ] {
            assert!(matches!(RunConfig::load(None, &bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
