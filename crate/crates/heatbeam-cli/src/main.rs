mod commands;
mod config;
mod store;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatbeam::Error as LabError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use commands::Command;
use config::{ConfigError, RunConfig};
use store::ResultStore;

/// Numerical laboratory for a heat equation coupled to a damped beam.
///
/// Settings come from `--config` (sectioned `key = value` text) and are then
/// overridden by the flags below. Exit status: 0 when every check of the run
/// held, 1 when a check failed, 2 for configuration errors.
#[derive(Parser)]
#[command(name = "heatbeam", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Free forward evolution from a random datum; energy ledger and beam trace.
    Simulate,
    /// Adjoint evolution and the discrete transpose pairing.
    Adjoint,
    /// Penalized HUM control of a random datum.
    Hum,
    /// HUM cost over a list of horizons and the log(cost) ~ 1/T fit.
    #[command(name = "sweep-T", alias = "sweep-t")]
    SweepT,
    /// HUM cost over a list of damping values.
    SweepAlpha,
    /// Observability Gramian and K_T.
    Gramian,
    /// Conjugated decomposition residuals on random beam samples.
    AuditDecomp,
    /// Integration-by-parts identities (one pair with --i/--j, else all).
    AuditIbp,
    /// Beam Carleman estimate, calibrate-then-verify.
    AuditBeam,
    /// Heat Carleman estimate, calibrate-then-verify.
    AuditHeat,
    /// Coupled Carleman estimate on adjoint trajectories.
    AuditCoupled,
    /// The critical damping constants.
    AlphaStar,
    /// Weight values and parameter admissibility.
    WeightsInspect,
}

impl Sub {
    fn command(self) -> Command {
        match self {
            Sub::Simulate => Command::Simulate,
            Sub::Adjoint => Command::Adjoint,
            Sub::Hum => Command::Hum,
            Sub::SweepT => Command::SweepT,
            Sub::SweepAlpha => Command::SweepAlpha,
            Sub::Gramian => Command::Gramian,
            Sub::AuditDecomp => Command::AuditDecomp,
            Sub::AuditIbp => Command::AuditIbp,
            Sub::AuditBeam => Command::AuditBeam,
            Sub::AuditHeat => Command::AuditHeat,
            Sub::AuditCoupled => Command::AuditCoupled,
            Sub::AlphaStar => Command::AlphaStar,
            Sub::WeightsInspect => Command::WeightsInspect,
        }
    }
}

/// Flags mirror the config keys; values are parsed by the config parser.
#[derive(Args, Default)]
struct Overrides {
    /// Config file to start from.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: heatbeam-out/<command>).
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    n_x1: Option<String>,
    #[arg(long, global = true)]
    n_x2: Option<String>,
    /// default, control or auto.
    #[arg(long, global = true)]
    regions: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long = "t-final", short = 'T', global = true)]
    t_final: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long, global = true)]
    s: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    mu: Option<String>,
    /// implicit-euler or crank-nicolson.
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    dt: Option<String>,
    #[arg(long, global = true)]
    n_steps: Option<String>,
    /// Comma-separated horizons.
    #[arg(long, global = true)]
    t_list: Option<String>,
    /// Comma-separated damping values.
    #[arg(long, global = true)]
    alpha_list: Option<String>,
    #[arg(long, global = true)]
    basis_size: Option<String>,
    #[arg(long, global = true)]
    duality: Option<String>,
    #[arg(long, global = true)]
    max_mode: Option<String>,
    #[arg(long, global = true)]
    n_samples: Option<String>,
    #[arg(long, global = true)]
    n_calibration: Option<String>,
    #[arg(long, global = true)]
    n_fresh: Option<String>,
    #[arg(long, global = true)]
    margin: Option<String>,
    /// 1.6, 1.7 or 1.8 (also undamped, damped, small-damping).
    #[arg(long, global = true)]
    theorem: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    i: Option<String>,
    #[arg(long, global = true)]
    j: Option<String>,
    #[arg(long, global = true)]
    ablate: Option<String>,
    #[arg(long, global = true)]
    x2: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &'static str, &Option<String>)> {
        vec![
            ("", "seed", &self.seed),
            ("geometry", "n_x1", &self.n_x1),
            ("geometry", "n_x2", &self.n_x2),
            ("geometry", "regions", &self.regions),
            ("physics", "alpha", &self.alpha),
            ("physics", "t_final", &self.t_final),
            ("physics", "k", &self.k),
            ("weights", "tau", &self.tau),
            ("weights", "theta", &self.theta),
            ("weights", "s", &self.s),
            ("weights", "lambda", &self.lambda),
            ("weights", "mu", &self.mu),
            ("experiment", "scheme", &self.scheme),
            ("experiment", "epsilon", &self.epsilon),
            ("experiment", "dt", &self.dt),
            ("experiment", "n_steps", &self.n_steps),
            ("experiment", "t_list", &self.t_list),
            ("experiment", "alpha_list", &self.alpha_list),
            ("experiment", "basis_size", &self.basis_size),
            ("experiment", "duality", &self.duality),
            ("experiment", "max_mode", &self.max_mode),
            ("experiment", "n_samples", &self.n_samples),
            ("experiment", "n_calibration", &self.n_calibration),
            ("experiment", "n_fresh", &self.n_fresh),
            ("experiment", "margin", &self.margin),
            ("experiment", "theorem", &self.theorem),
            ("experiment", "beta", &self.beta),
            ("experiment", "i", &self.i),
            ("experiment", "j", &self.j),
            ("experiment", "ablate", &self.ablate),
            ("experiment", "x2", &self.x2),
            ("output", "dir", &self.out),
        ]
    }
}

fn build_config(cli: &Cli, cmd: Command) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    cfg.output_dir = PathBuf::from("heatbeam-out").join(cmd.name());
    if let Some(path) = &cli.overrides.config {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for (section, key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(section, key, v)?;
        }
    }
    cmd.resolve(&mut cfg)?;
    Ok(cfg)
}

/// Library errors that come from bad inputs rather than failed computations.
fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<LabError>(),
                Some(LabError::InvalidArgument(_) | LabError::Inadmissible(_) | LabError::Config(_) | LabError::GridTooCoarse(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = cli.command.command();
    let cfg = match build_config(&cli, cmd) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("heatbeam: configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = ResultStore::create(&cfg.output_dir, &cfg).and_then(|mut store| {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        match commands::run(cmd, &cfg, rng, &mut store) {
            Ok(outcome) => {
                let manifest = store.finish(cmd.name(), &cfg, outcome.passed, &outcome.summary)?;
                Ok((outcome, manifest))
            }
            Err(e) => {
                // the manifest still lists whatever was written before the failure
                store.finish(cmd.name(), &cfg, false, &serde_json::json!({ "error": format!("{e:#}") }))?;
                Err(e)
            }
        }
    });
    match result {
        Ok((outcome, manifest)) => {
            for l in &outcome.lines {
                println!("{l}");
            }
            println!("{}: {} (manifest {})", cmd.name(), if outcome.passed { "PASS" } else { "FAIL" }, manifest.display());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("heatbeam {}: {e:#}", cmd.name());
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
