//! Output directory of one run: CSV tables, JSON artifacts and the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use heatbeam::weights::Calibration;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// One CSV cell. Floats are written with 17 significant digits.
#[derive(Clone, Debug)]
pub enum Cell {
    F(f64),
    I(u64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::F(v) => format!("{v}"),
            Cell::I(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::store::Cell::from($x)),*] };
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    heatbeam_version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a RunConfig,
    calibration_format: &'a str,
    calibration_version: u32,
    timestamp_unix: u64,
    passed: bool,
    summary: &'a serde_json::Value,
    artifacts: &'a [Artifact],
}

pub struct ResultStore {
    dir: PathBuf,
    hash: String,
    artifacts: Vec<Artifact>,
}

fn sha_of(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading back {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ResultStore {
    /// Creates the directory and writes the canonical config next to the results.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut store = Self { dir: dir.to_path_buf(), hash: config.hash(), artifacts: Vec::new() };
        let text = format!("# config_hash = {}\n{}", store.hash, config.to_text());
        store.write_file("config.ini", text.as_bytes())?;
        Ok(store)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = sha_of(&self.dir.join(name))?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact { file: name.to_string(), sha256 });
        Ok(())
    }

    /// CSV with a header row; every row ends with the config hash.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
        for (n, r) in rows.iter().enumerate() {
            anyhow::ensure!(r.len() == header.len(), "{name}: row {n} has {} cells for {} columns", r.len(), header.len());
        }
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut head: Vec<&str> = header.to_vec();
        head.push("config_hash");
        w.write_record(&head)?;
        for r in rows {
            let mut rec: Vec<String> = r.iter().map(Cell::render).collect();
            rec.push(self.hash.clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        drop(w);
        self.record(name)
    }

    /// Pretty JSON object `{ "config_hash": ..., "data": value }`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let doc = serde_json::json!({ "config_hash": self.hash, "data": value });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.write_file(name, text.as_bytes())
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, command: &str, config: &RunConfig, passed: bool, summary: &serde_json::Value) -> Result<PathBuf> {
        let cal = Calibration::frozen();
        let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let m = Manifest {
            format: "heatbeam-run",
            heatbeam_version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config_hash: &self.hash,
            config,
            calibration_format: &cal.format,
            calibration_version: cal.version,
            timestamp_unix,
            passed,
            summary,
            artifacts: &self.artifacts,
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1 + 0.2;
        let s = Cell::F(x).render();
        assert_eq!(s.parse::<f64>().unwrap(), x);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(Cell::F(f64::INFINITY).render(), "inf");
    }

    #[test]
    fn table_appends_hash_and_records_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut st = ResultStore::create(dir.path(), &cfg).unwrap();
        st.table("t.csv", &["a", "b"], &[row![1.5, 2usize]]).unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a,b,config_hash");
        assert_eq!(lines[1], format!("1.5000000000000000e0,2,{}", cfg.hash()));
        assert!(st.table("bad.csv", &["a"], &[row![1.0, 2.0]]).is_err());
        let m = st.finish("test", &cfg, true, &serde_json::json!({})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(m).unwrap()).unwrap();
        let files: Vec<&str> = v["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
        assert!(files.contains(&"config.ini") && files.contains(&"t.csv"));
        assert_eq!(v["config_hash"], cfg.hash());
    }
}
