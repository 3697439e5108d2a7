//! Output files: CSV time series, JSON reports and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::evolution::TrajectoryRecord;

/// Canonical order of the optional scalar columns.
pub const SCALAR_ORDER: [&str; 5] = ["M", "Mhat", "F_fw", "F_bw", "D_T"];

/// Column data for [`write_timeseries`].
#[derive(Clone, Debug, Default)]
pub struct Timeseries {
    pub times: Vec<f64>,
    pub delta_j: Vec<f64>,
    /// `|mhat(nu)|` for `nu = 0 ..= nu_max` per sample.
    pub harmonics: Vec<Vec<f64>>,
    pub nu_max: usize,
    pub scalars: Vec<(String, Vec<f64>)>,
}

impl Timeseries {
    /// Times, `deltaJ`, folded harmonics and whichever of `Mhat`, `F_fw`,
    /// `F_bw`, `D_T` the record carries.
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        let nu_max = rec.nu_max;
        let harmonics = rec
            .harmonic_series
            .iter()
            .map(|row| (0..=nu_max).map(|nu| row[nu_max + nu].norm()).collect())
            .collect();
        let mut ts = Timeseries {
            times: rec.times.clone(),
            delta_j: rec.delta_j.clone(),
            harmonics,
            nu_max,
            scalars: Vec::new(),
        };
        for (name, col) in [("Mhat", &rec.mhat_dist), ("F_fw", &rec.f_fw), ("F_bw", &rec.f_bw), ("D_T", &rec.d_t)] {
            if let Some(v) = col {
                ts = ts.with_scalar(name, v.clone());
            }
        }
        ts
    }

    /// Adds or replaces a scalar column; columns stay in canonical order.
    pub fn with_scalar(mut self, name: &str, values: Vec<f64>) -> Self {
        self.scalars.retain(|(n, _)| n != name);
        self.scalars.push((name.to_string(), values));
        let rank = |n: &str| SCALAR_ORDER.iter().position(|s| *s == n).unwrap_or(SCALAR_ORDER.len());
        self.scalars.sort_by_key(|(n, _)| rank(n));
        self
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "deltaJ".to_string()];
        h.extend((0..=self.nu_max).map(|nu| format!("abs_mhat_{nu}")));
        h.extend(self.scalars.iter().map(|(n, _)| n.clone()));
        h
    }
}

/// Shortest form that keeps 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV with a header row and one row per sample.
pub fn write_timeseries(ts: &Timeseries, path: &Path) -> Result<()> {
    let n = ts.times.len();
    let bad_len = ts.delta_j.len() != n
        || ts.harmonics.len() != n
        || ts.harmonics.iter().any(|r| r.len() != ts.nu_max + 1)
        || ts.scalars.iter().any(|(_, v)| v.len() != n);
    if bad_len {
        return Err(Error::InvalidParams("time series columns differ in length".into()));
    }
    let mut out = ts.header().join(",");
    out.push('\n');
    for k in 0..n {
        let mut row = vec![format_float(ts.times[k]), format_float(ts.delta_j[k])];
        row.extend(ts.harmonics[k].iter().map(|&v| format_float(v)));
        row.extend(ts.scalars.iter().map(|(_, v)| format_float(v[k])));
        let _ = writeln!(out, "{}", row.join(","));
    }
    write_atomic(path, out.as_bytes())
}

/// Header and rows of a CSV as written by this module.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidParams(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Two-column CSV of a scalar series.
pub fn write_series(name: &str, times: &[f64], values: &[f64], path: &Path) -> Result<()> {
    let mut out = format!("t,{name}\n");
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(out, "{},{}", format_float(*t), format_float(*v));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidParams(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    /// Resolved configuration as TOML text.
    pub config: String,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
    pub failures: Vec<Failure>,
}

/// Collects the files a run writes and emits the manifest last.
pub struct ManifestBuilder {
    dir: PathBuf,
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(dir: &Path, command: &str, config_toml: String, seeds: Vec<u64>, workers: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ManifestBuilder {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                config: config_toml,
                seeds,
                workers,
                wall_time_s: 0.0,
                files: Vec::new(),
                failures: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output file inside the run directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn add_seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.manifest.seeds.extend(seeds);
    }

    pub fn fail(&mut self, item: impl Into<String>, error: impl Into<String>) {
        self.manifest.failures.push(Failure { item: item.into(), error: error.into() });
    }

    /// Checksums every regular file in the run directory and writes
    /// `manifest.json` atomically.
    pub fn finish(mut self) -> Result<RunManifest> {
        let mut files = Vec::new();
        let entries = std::fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().to_string();
            if !path.is_file() || name == "manifest.json" || name.ends_with(".tmp") {
                continue;
            }
            files.push(FileEntry {
                bytes: entry.metadata().map_err(|e| Error::io(&path, e))?.len(),
                sha256: sha256_file(&path)?,
                path: name,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.files = files;
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        write_json(&self.manifest, &self.dir.join("manifest.json"))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Timeseries {
        Timeseries {
            times: (0..n).map(|k| k as f64 * 0.1).collect(),
            delta_j: (0..n).map(|k| 0.1 / (k as f64 + 3.0)).collect(),
            harmonics: (0..n).map(|k| vec![1.0 / (k as f64 + 7.0), std::f64::consts::PI * 1e-9]).collect(),
            nu_max: 1,
            scalars: Vec::new(),
        }
    }

    #[test]
    fn empty_record_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        write_timeseries(&sample(0), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,deltaJ,abs_mhat_0,abs_mhat_1\n");
    }

    #[test]
    fn three_samples_four_lines_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let ts = sample(3)
            .with_scalar("D_T", vec![0.3, 0.2, 0.1])
            .with_scalar("M", vec![1.0, 2.0 / 3.0, 1e-300]);
        write_timeseries(&ts, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, ["t", "deltaJ", "abs_mhat_0", "abs_mhat_1", "M", "D_T"]);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row[0].to_bits(), ts.times[k].to_bits());
            assert_eq!(row[1].to_bits(), ts.delta_j[k].to_bits());
            assert_eq!(row[2].to_bits(), ts.harmonics[k][0].to_bits());
            assert_eq!(row[4].to_bits(), ts.scalars[0].1[k].to_bits());
        }
    }

    #[test]
    fn ragged_columns_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ts = sample(3).with_scalar("M", vec![1.0]);
        assert!(write_timeseries(&ts, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn manifest_lists_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let mut m = ManifestBuilder::new(&run, "steady", "x = 1".into(), vec![3], 1).unwrap();
        std::fs::write(m.path("a.txt"), b"abc").unwrap();
        m.fail("point 2", "boom");
        let man = m.finish().unwrap();
        assert_eq!(man.files.len(), 1);
        assert_eq!(
            man.files[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let text = std::fs::read_to_string(run.join("manifest.json")).unwrap();
        assert!(text.contains("\"failures\""));
    }
}
