//! Run configuration: `key = value` lines grouped under `[section]` headers.
//! Command-line overrides go through the same parser, so every error names the
//! field it came from.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use heatbeam::audit::beam::BeamTheorem;
use heatbeam::simulator::Scheme;
use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field_err(section: &str, key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{section}.{key}: {msg}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionsChoice {
    Default,
    Control,
}

impl RegionsChoice {
    fn name(self) -> &'static str {
        match self {
            RegionsChoice::Default => "default",
            RegionsChoice::Control => "control",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Geometry {
    pub n_x1: usize,
    pub n_x2: usize,
    /// `None` picks the command's default layout.
    pub regions: Option<RegionsChoice>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Physics {
    pub alpha: f64,
    pub t_final: f64,
    pub k: f64,
}

/// Either `(tau, theta)` through the regime map, or all of `s, lambda, mu`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Weights {
    pub tau: f64,
    pub theta: f64,
    pub s: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Experiment {
    pub command: Option<String>,
    pub scheme: Scheme,
    pub epsilon: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub t_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub basis_size: usize,
    pub duality: bool,
    pub max_mode: usize,
    pub n_samples: usize,
    pub n_calibration: usize,
    pub n_fresh: usize,
    pub margin: f64,
    pub theorem: String,
    pub beta: f64,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub ablate: bool,
    pub x2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub physics: Physics,
    pub weights: Weights,
    pub experiment: Experiment,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: Geometry { n_x1: 32, n_x2: 17, regions: None },
            physics: Physics { alpha: 1.0, t_final: 1.0, k: 2.0 },
            weights: Weights { tau: 0.2, theta: 0.2, s: None, lambda: None, mu: None },
            experiment: Experiment {
                command: None,
                scheme: Scheme::ImplicitEuler,
                epsilon: 1e-8,
                dt: 0.01,
                n_steps: 100,
                t_list: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
                alpha_list: vec![0.5, 1.0, 2.0, 8.0],
                basis_size: 200,
                duality: false,
                max_mode: 6,
                n_samples: 10,
                n_calibration: 20,
                n_fresh: 100,
                margin: 2.0,
                theorem: "1.7".into(),
                beta: 1.0,
                i: None,
                j: None,
                ablate: false,
                x2: 0.5,
            },
            output_dir: PathBuf::from("heatbeam-out"),
        }
    }
}

fn num(section: &str, key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(field_err(section, key, format!("expected a finite number, got {v:?}"))),
    }
}

fn int(section: &str, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.trim().parse::<usize>().map_err(|_| field_err(section, key, format!("expected a non-negative integer, got {v:?}")))
}

fn boolean(section: &str, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(field_err(section, key, format!("expected true or false, got {v:?}"))),
    }
}

fn list(section: &str, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').filter(|p| !p.trim().is_empty()).map(|p| num(section, key, p)).collect()
}

fn optional<T>(v: &str, parse: impl FnOnce(&str) -> Result<T, ConfigError>) -> Result<Option<T>, ConfigError> {
    if v.trim().is_empty() || v.trim() == "none" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn fmt_opt<T: fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| format!("{x:?}"))
}

impl RunConfig {
    #[cfg(test)]
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError(format!("config syntax: {e}")))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                self.set(section.unwrap_or(""), key, value)?;
            }
        }
        Ok(())
    }

    /// Sets one field; `section` is empty for top-level keys.
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        let (g, p, w, e) = (&mut self.geometry, &mut self.physics, &mut self.weights, &mut self.experiment);
        match (section, key) {
            ("", "seed") => {
                self.seed = v.trim().parse().map_err(|_| field_err("", "seed", format!("expected an unsigned integer, got {v:?}")))?
            }
            ("geometry", "n_x1") => g.n_x1 = int(section, key, v)?,
            ("geometry", "n_x2") => g.n_x2 = int(section, key, v)?,
            ("geometry", "regions") => {
                g.regions = match v.trim() {
                    "default" => Some(RegionsChoice::Default),
                    "control" => Some(RegionsChoice::Control),
                    "" | "auto" => None,
                    _ => return Err(field_err(section, key, format!("expected default, control or auto, got {v:?}"))),
                }
            }
            ("physics", "alpha") => p.alpha = num(section, key, v)?,
            ("physics", "t_final") => p.t_final = num(section, key, v)?,
            ("physics", "k") => p.k = num(section, key, v)?,
            ("weights", "tau") => w.tau = num(section, key, v)?,
            ("weights", "theta") => w.theta = num(section, key, v)?,
            ("weights", "s") => w.s = optional(v, |x| num(section, key, x))?,
            ("weights", "lambda") => w.lambda = optional(v, |x| num(section, key, x))?,
            ("weights", "mu") => w.mu = optional(v, |x| num(section, key, x))?,
            ("experiment", "command") => e.command = optional(v, |x| Ok(x.trim().to_string()))?,
            ("experiment", "scheme") => {
                e.scheme = match v.trim() {
                    "implicit-euler" | "ie" => Scheme::ImplicitEuler,
                    "crank-nicolson" | "cn" => Scheme::CrankNicolson,
                    _ => return Err(field_err(section, key, format!("expected implicit-euler or crank-nicolson, got {v:?}"))),
                }
            }
            ("experiment", "epsilon") => e.epsilon = num(section, key, v)?,
            ("experiment", "dt") => e.dt = num(section, key, v)?,
            ("experiment", "n_steps") => e.n_steps = int(section, key, v)?,
            ("experiment", "t_list") => e.t_list = list(section, key, v)?,
            ("experiment", "alpha_list") => e.alpha_list = list(section, key, v)?,
            ("experiment", "basis_size") => e.basis_size = int(section, key, v)?,
            ("experiment", "duality") => e.duality = boolean(section, key, v)?,
            ("experiment", "max_mode") => e.max_mode = int(section, key, v)?,
            ("experiment", "n_samples") => e.n_samples = int(section, key, v)?,
            ("experiment", "n_calibration") => e.n_calibration = int(section, key, v)?,
            ("experiment", "n_fresh") => e.n_fresh = int(section, key, v)?,
            ("experiment", "margin") => e.margin = num(section, key, v)?,
            ("experiment", "theorem") => e.theorem = v.trim().to_string(),
            ("experiment", "beta") => e.beta = num(section, key, v)?,
            ("experiment", "i") => e.i = optional(v, |x| int(section, key, x))?,
            ("experiment", "j") => e.j = optional(v, |x| int(section, key, x))?,
            ("experiment", "ablate") => e.ablate = boolean(section, key, v)?,
            ("experiment", "x2") => e.x2 = num(section, key, v)?,
            ("output", "dir") => self.output_dir = PathBuf::from(v.trim()),
            _ => {
                let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                return Err(ConfigError(format!("{name}: unknown setting")));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_text(&self) -> String {
        let (g, p, w, e) = (&self.geometry, &self.physics, &self.weights, &self.experiment);
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "\n[geometry]");
        let _ = writeln!(out, "n_x1 = {}\nn_x2 = {}", g.n_x1, g.n_x2);
        let _ = writeln!(out, "regions = {}", g.regions.map_or("auto", |r| r.name()));
        let _ = writeln!(out, "\n[physics]");
        let _ = writeln!(out, "alpha = {:?}\nt_final = {:?}\nk = {:?}", p.alpha, p.t_final, p.k);
        let _ = writeln!(out, "\n[weights]");
        let _ = writeln!(out, "tau = {:?}\ntheta = {:?}", w.tau, w.theta);
        let _ = writeln!(out, "s = {}\nlambda = {}\nmu = {}", fmt_opt(&w.s), fmt_opt(&w.lambda), fmt_opt(&w.mu));
        let _ = writeln!(out, "\n[experiment]");
        let _ = writeln!(out, "command = {}", e.command.as_deref().unwrap_or("none"));
        let scheme = match e.scheme {
            Scheme::ImplicitEuler => "implicit-euler",
            Scheme::CrankNicolson => "crank-nicolson",
        };
        let _ = writeln!(out, "scheme = {scheme}");
        let _ = writeln!(out, "epsilon = {:?}\ndt = {:?}\nn_steps = {}", e.epsilon, e.dt, e.n_steps);
        let _ = writeln!(out, "t_list = {}\nalpha_list = {}", fmt_list(&e.t_list), fmt_list(&e.alpha_list));
        let _ = writeln!(out, "basis_size = {}\nduality = {}\nmax_mode = {}", e.basis_size, e.duality, e.max_mode);
        let _ = writeln!(out, "n_samples = {}\nn_calibration = {}\nn_fresh = {}", e.n_samples, e.n_calibration, e.n_fresh);
        let _ = writeln!(out, "margin = {:?}\ntheorem = {}\nbeta = {:?}", e.margin, e.theorem, e.beta);
        let _ = writeln!(out, "i = {}\nj = {}\nablate = {}\nx2 = {:?}", fmt_opt(&e.i), fmt_opt(&e.j), e.ablate, e.x2);
        let _ = writeln!(out, "\n[output]");
        let _ = writeln!(out, "dir = {}", self.output_dir.display());
        out
    }

    /// SHA-256 of the canonical text, hex encoded. The output directory is
    /// left out so the same run written elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_text().as_bytes()))
    }

    pub fn explicit_weights(&self) -> Option<(f64, f64, f64)> {
        match (self.weights.s, self.weights.lambda, self.weights.mu) {
            (Some(s), Some(l), Some(m)) => Some((s, l, m)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (g, p, w, e) = (&self.geometry, &self.physics, &self.weights, &self.experiment);
        let check = |ok: bool, section: &str, key: &str, msg: &str| if ok { Ok(()) } else { Err(field_err(section, key, msg)) };
        check(g.n_x1 >= 8, "geometry", "n_x1", "need at least 8 points")?;
        check(g.n_x2 >= 5, "geometry", "n_x2", "need at least 5 layers")?;
        check(p.alpha >= 0.0, "physics", "alpha", "must be non-negative")?;
        check(p.t_final > 0.0, "physics", "t_final", "must be positive")?;
        check(p.k >= 2.0, "physics", "k", "must be at least 2")?;
        check(w.tau > 0.0, "weights", "tau", "must be positive")?;
        check(w.theta > 0.0, "weights", "theta", "must be positive")?;
        let given = [w.s, w.lambda, w.mu].iter().filter(|v| v.is_some()).count();
        check(given == 0 || given == 3, "weights", "s", "s, lambda and mu must be given together")?;
        check(e.epsilon > 0.0, "experiment", "epsilon", "must be positive")?;
        check(e.dt > 0.0 && e.dt < p.t_final, "experiment", "dt", "must lie in (0, t_final)")?;
        check(e.n_steps >= 1, "experiment", "n_steps", "must be at least 1")?;
        check(!e.t_list.is_empty() && e.t_list.iter().all(|&t| t > 0.0), "experiment", "t_list", "needs positive horizons")?;
        check(e.t_list.windows(2).all(|w| w[1] > w[0]), "experiment", "t_list", "must be strictly increasing")?;
        check(!e.alpha_list.is_empty() && e.alpha_list.iter().all(|&a| a > 0.0), "experiment", "alpha_list", "needs positive values")?;
        check(e.basis_size >= 1, "experiment", "basis_size", "must be at least 1")?;
        check(e.max_mode >= 1, "experiment", "max_mode", "must be at least 1")?;
        check(e.n_samples >= 1, "experiment", "n_samples", "must be at least 1")?;
        check(e.n_calibration >= 1, "experiment", "n_calibration", "must be at least 1")?;
        check(e.n_fresh >= 1, "experiment", "n_fresh", "must be at least 1")?;
        check(e.margin >= 1.0, "experiment", "margin", "must be at least 1")?;
        BeamTheorem::parse(&e.theorem).map_err(|err| field_err("experiment", "theorem", err))?;
        check(e.i.is_none_or(|i| (1..=8).contains(&i)), "experiment", "i", "must lie in 1..=8")?;
        check(e.j.is_none_or(|j| (1..=7).contains(&j)), "experiment", "j", "must lie in 1..=7")?;
        check((0.0..=1.0).contains(&e.x2), "experiment", "x2", "must lie in [0, 1]")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.physics.alpha = 0.1 + 0.2;
        c.weights.s = Some(3.0);
        c.weights.lambda = Some(0.5);
        c.weights.mu = Some(0.2);
        c.experiment.i = Some(3);
        c.geometry.regions = Some(RegionsChoice::Control);
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn sections_and_comments() {
        let c = RunConfig::from_text("seed = 7\n; a comment\n[physics]\nalpha = 2\n[experiment]\nt_list = 0.5, 1, 2\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.physics.alpha, 2.0);
        assert_eq!(c.experiment.t_list, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_text("[physics]\nalpha = fast\n").unwrap_err();
        assert!(e.0.starts_with("physics.alpha:"), "{e}");
        let e = RunConfig::from_text("[physics]\nbeta = 1\n").unwrap_err();
        assert_eq!(e.0, "physics.beta: unknown setting");
        let mut c = RunConfig::default();
        c.weights.s = Some(1.0);
        assert!(c.validate().unwrap_err().0.starts_with("weights.s:"));
        c = RunConfig::default();
        c.experiment.t_list = vec![1.0, 0.5];
        assert!(c.validate().unwrap_err().0.starts_with("experiment.t_list:"));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
