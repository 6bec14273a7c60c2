use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdp")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"kind": "simulate", "seed": 4, "m": 4, "n": 64, "depth": 10, "l_gen": 5,
    "alpha": 0.8, "epsilon": 1.0, "mechanism": "laplace", "reps": 50}"#;

#[test]
fn list_defaults_prints_every_key() {
    let out = fdp(&["list-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["mcmc_burn_in", "mcmc_thinning", "kappa1", "kappa2", "l_star", "reps", "estimator"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}");
    }
    let burn = text.lines().find(|l| l.starts_with("mcmc_burn_in")).unwrap();
    assert!(burn.contains("5000"));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = scratch("unknown");
    let cfg = write_config(&dir, r#"{"kind": "simulate", "bogus": 1}"#);
    let out = fdp(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn kind_mismatch_is_a_validation_error() {
    let dir = scratch("mismatch");
    let cfg = write_config(&dir, SMALL);
    let out = fdp(&["tails", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ttpw_is_rejected_for_global_runs() {
    let dir = scratch("ttpw");
    let cfg = write_config(&dir, &SMALL.replace("\"reps\": 50", "\"reps\": 50, \"estimator\": \"ttpw\""));
    let out = fdp(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = scratch("runtime");
    let cfg = write_config(&dir, SMALL);
    let blocker = dir.join("taken");
    std::fs::write(&blocker, b"x").unwrap();
    let out = fdp(&["simulate", "--config", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_writes_hashed_outputs() {
    let dir = scratch("simulate");
    let cfg = write_config(&dir, SMALL);
    let out_dir = dir.join("out");
    let out = fdp(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "estimate.csv", "truth.csv", "risk.csv", "schedule.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);

    let mut risk = csv::Reader::from_path(out_dir.join("risk.csv")).unwrap();
    assert_eq!(&risk.headers().unwrap()[0], "config_hash");
    let row = risk.records().next().unwrap().unwrap();
    assert_eq!(&row[0], hash);
    assert_eq!(&row[1], "256");

    let file = std::io::BufReader::new(std::fs::File::open(out_dir.join("estimate.csv")).unwrap());
    let est = fdp_core::wavelet::read_coefficients_csv(file);
    assert!(est.is_ok(), "{est:?}");

    // Same seed, same bytes.
    let again = dir.join("again");
    let out = fdp(&["simulate", "--config", &cfg, "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["estimate.csv", "risk.csv", "aggregate.csv"] {
        assert_eq!(std::fs::read(out_dir.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = scratch("seed");
    let cfg = write_config(&dir, SMALL);
    let a = dir.join("a");
    let b = dir.join("b");
    assert!(fdp(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(fdp(&["simulate", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap()]).status.success());
    assert_ne!(std::fs::read(a.join("aggregate.csv")).unwrap(), std::fs::read(b.join("aggregate.csv")).unwrap());
}
