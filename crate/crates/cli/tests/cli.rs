use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stoch-eit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let text = r#"
name = "small"
seed = 11

[mesh]
level = 1

[currents]
t_max = 5

[chaos]
degree = 2

[noise]
level = 1e-3

[method]
kind = "both"

[method.fm]
noisy_cutoff = { kind = "fixed", tau = 4 }

[method.mm.lattice]
size = 7
radius = 0.1
clip = 0.8

[grid]
size = 15
clip = 0.95

[validation]
monte_carlo_samples = 200
dipole_oracle = false

[[anomaly.pixels]]
id = 1
contrast = { lo = 8.0, hi = 10.0 }
shape = { kind = "disk", center = [0.25, 0.2], radius = 0.3 }
"#;
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn preset_prints_config_and_choices() {
    let o = run(&["preset", "test1"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stdout.contains("name = \"test1\""));
    assert!(stderr.contains("approximate geometry"));
    assert!(stderr.contains("T = 50"));

    let o = run(&["preset", "test9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preset_file_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["preset", "test3", "--out", out, "--seed", "99"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("test3.toml")).unwrap();
    let c = stoch_eit_config(&text);
    assert_eq!(c.seed, 99);
    assert_eq!(c.anomaly.len(), 9);
}

fn stoch_eit_config(text: &str) -> stoch_eit::config::ExperimentConfig {
    stoch_eit::config::ExperimentConfig::from_toml(text).unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = run(&["simulate", &cfg, "--out", out_s, "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "mesh.txt", "L_clean.ntd", "L_noisy.ntd", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let clean = out.join("L_clean.ntd");
    let o = run(&["noise", &cfg, clean.to_str().unwrap(), "--out", out.join("n").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(out.join("n/L_noisy.ntd")).unwrap(),
        std::fs::read(out.join("L_noisy.ntd")).unwrap()
    );

    let noisy = out.join("L_noisy.ntd");
    let o = run(&["reconstruct", &cfg, noisy.to_str().unwrap(), "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("tau = 4"));
    for f in ["fm_indicator.csv", "fm_indicator.pgm", "mm_mask.csv", "mm_mask.pgm", "reconstruct.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("fm_indicator.csv") && manifest.contains("L_clean.ntd"));

    let o = run(&["validate", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("validation.json").exists());
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["simulate", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["simulate", &cfg, "--out", b.to_str().unwrap(), "--threads", "1"]).status.success());
    for f in ["L_clean.ntd", "L_noisy.ntd", "mesh.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert!(run(&["simulate", &cfg, "--out", c.to_str().unwrap(), "--seed", "12"]).status.success());
    assert_eq!(std::fs::read(a.join("L_clean.ntd")).unwrap(), std::fs::read(c.join("L_clean.ntd")).unwrap());
    assert_ne!(std::fs::read(a.join("L_noisy.ntd")).unwrap(), std::fs::read(c.join("L_noisy.ntd")).unwrap());
}

#[test]
fn contract_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(run(&["simulate", &cfg, "--out", out.to_str().unwrap()]).status.success());

    let text = std::fs::read_to_string(&cfg).unwrap().replace("clip = 0.8", "clip = 0.8\n\n[method.mm]\nbeta = 5.0");
    let bad = dir.path().join("bad_beta.toml");
    std::fs::write(&bad, text).unwrap();
    let bad_out = dir.path().join("bad");
    let o = run(&["reconstruct", bad.to_str().unwrap(), out.join("L_clean.ntd").to_str().unwrap(), "--out", bad_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!bad_out.exists());

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, std::fs::read_to_string(&cfg).unwrap().replace("seed = 11", "seed = 11\nsede = 2")).unwrap();
    assert_eq!(run(&["simulate", typo.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(run(&["simulate", "/nonexistent.toml"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", &cfg, "--threads", "0"]).status.code(), Some(1));

    let garbage = dir.path().join("garbage.ntd");
    std::fs::write(&garbage, "not a matrix\n").unwrap();
    let o = run(&["reconstruct", &cfg, garbage.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupted_matrix_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(run(&["simulate", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let path = out.join("L_clean.ntd");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut row: Vec<String> = lines[2].split_whitespace().map(String::from).collect();
    row[7] = "1.0e0".into();
    lines[2] = row.join(" ");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = run(&["validate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let report = std::fs::read_to_string(out.join("validation.json")).unwrap();
    assert!(report.contains("stored_symmetry_defect"));
}
