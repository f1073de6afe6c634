use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn heatbeam(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatbeam"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn alpha_star_prints_constants_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = heatbeam(&["alpha-star"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("beta* = 0.437765644120981"), "{text}");
    assert!(text.contains("alpha* = 1.45333768702221"), "{text}");
    let rows = csv_rows(&dir.path().join("alpha_star.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], ["beta_star", "alpha_star", "config_hash"]);
    let beta: f64 = rows[1][0].parse().unwrap();
    let alpha: f64 = rows[1][1].parse().unwrap();
    assert!((beta - 0.437765644120981).abs() <= 1e-13);
    assert!((alpha - 1.45333768702221).abs() <= 1e-13);
}

#[test]
fn identical_config_and_seed_give_identical_tables() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["simulate", "--seed", "11", "--n-steps", "20"];
    for d in [&a, &b] {
        assert_eq!(heatbeam(&args, d.path()).status.code(), Some(0));
    }
    for name in ["energy.csv", "beam.csv", "fluid_final.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    assert_eq!(manifest(a.path())["config_hash"], manifest(b.path())["config_hash"]);

    heatbeam(&["simulate", "--seed", "12", "--n-steps", "20"], c.path());
    assert_ne!(fs::read(a.path().join("energy.csv")).unwrap(), fs::read(c.path().join("energy.csv")).unwrap());
    assert_ne!(manifest(a.path())["config_hash"], manifest(c.path())["config_hash"]);
}

#[test]
fn single_ibp_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = heatbeam(&["audit-ibp", "--i", "1", "--j", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("ibp.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "I11");
    let col = rows[0].iter().position(|h| h == "rel_err").unwrap();
    assert!(rows[1][col].parse::<f64>().unwrap() <= 1e-7);
    assert!(!dir.path().join("closed_form.csv").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    fs::write(&cfg, "seed = 3\n\n[physics]\nalpha = 2\nt_final = 0.5\n\n[experiment]\nn_steps = 10\nscheme = crank-nicolson\n").unwrap();
    let out = dir.path().join("out");
    let o = heatbeam(&["simulate", "--config", cfg.to_str().unwrap(), "--alpha", "0.5"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["physics"]["alpha"], 0.5);
    assert_eq!(m["config"]["physics"]["t_final"], 0.5);
    assert_eq!(m["config"]["experiment"]["scheme"], "crank-nicolson");
    // 10 steps plus the initial row and the header
    assert_eq!(csv_rows(&out.join("energy.csv")).len(), 12);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = heatbeam(&["simulate", "--alpha", "fast"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("physics.alpha"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[physics]\nbeta = 1\n").unwrap();
    let o = heatbeam(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("physics.beta: unknown setting"), "{}", stderr(&o));

    let o = heatbeam(&["hum", "--t-list", "1,0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.t_list"), "{}", stderr(&o));

    let o = heatbeam(&["audit-beam", "--theorem", "1.8", "--alpha", "2"], &dir.path().join("beam"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absorption window is empty"), "{}", stderr(&o));
    assert_eq!(manifest(&dir.path().join("beam"))["passed"], false);
}

#[test]
fn failed_check_exits_with_one() {
    // one calibration sample cannot cover the ratio tail at alpha = 2
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "audit-coupled", "--n-x1", "16", "--n-x2", "9", "--n-steps", "20", "--alpha", "2", "--n-calibration", "1", "--n-fresh", "30", "--seed", "2",
    ];
    let o = heatbeam(&args, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
    let m = manifest(dir.path());
    assert_eq!(m["passed"], false);
    assert!(m["summary"]["violations"].as_u64().unwrap() > 0);
}

#[test]
fn manifest_lists_every_artifact_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = heatbeam(&["weights-inspect", "--n-steps", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(dir.path());
    let hash = m["config_hash"].as_str().unwrap().to_string();
    let listed: Vec<String> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap().to_string()).collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(sorted, on_disk);
    for a in m["artifacts"].as_array().unwrap() {
        let name = a["file"].as_str().unwrap();
        let bytes = fs::read(dir.path().join(name)).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{name}");
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(&hash), "{name} does not carry the config hash");
    }
    assert_eq!(m["calibration_version"], 1);
}
