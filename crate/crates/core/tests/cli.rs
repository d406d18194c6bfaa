use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fbsdej(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbsdej"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("FBSDEJ_SEED")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

#[test]
fn verify_passes_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbsdej(&["verify", "--problem", "example1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("check,value,threshold,direction,pass"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
    assert!(dir.path().join("config_resolved.toml").exists());
}

#[test]
fn flags_override_file_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 4\ngrid.steps = 40\nmarkovian.solver = \"quadrature\"\n").unwrap();
    let out = fbsdej(
        &[
            "markovian",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "5",
            "--set",
            "markovian.max_sweeps=3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved: toml::Table = fs::read_to_string(dir.path().join("config_resolved.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(4));
    assert_eq!(resolved["grid"]["steps"].as_integer(), Some(5));
    assert_eq!(resolved["markovian"]["max_sweeps"].as_integer(), Some(3));
    assert_eq!(resolved["command"].as_str(), Some("markovian"));
    let sweeps = fs::read_to_string(dir.path().join("sweeps.csv")).unwrap();
    assert!(sweeps.starts_with("m,sup_delta,u_at_xi,condition_number_max"));
}

#[test]
fn resolved_config_reproduces_outputs() {
    let a = tempfile::tempdir().unwrap();
    let out = fbsdej(
        &["rate", "--n-list", "4,8,16", "--samples", "500", "--seed", "3"],
        a.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let b = tempfile::tempdir().unwrap();
    let resolved = a.path().join("config_resolved.toml");
    let out = fbsdej(&["rate", "--config", resolved.to_str().unwrap()], b.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ra = fs::read(a.path().join("rate_report.csv")).unwrap();
    let rb = fs::read(b.path().join("rate_report.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn env_seed_is_used_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fbsdej"))
        .args(["errors", "--samples", "100", "--n", "4", "--output-dir"])
        .arg(dir.path())
        .env("FBSDEJ_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let resolved = fs::read_to_string(dir.path().join("config_resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 77"), "{resolved}");
    let report = fs::read_to_string(dir.path().join("error_report.csv")).unwrap();
    assert!(report.starts_with("metric,value,stderr"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "train.learning_rate = 0.1\n").unwrap();
    let out = fbsdej(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let j = stderr_json(&out);
    assert_eq!(j["error"], "config");
    assert!(j["message"].as_str().unwrap().contains("learning_rate"));
}

#[test]
fn duplicate_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dup.toml");
    fs::write(&cfg, "grid.steps = 10\ngrid.steps = 20\n").unwrap();
    let out = fbsdej(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let j = stderr_json(&out);
    let msg = j["message"].as_str().unwrap();
    assert!(msg.contains("steps") && msg.contains("line 2"), "{msg}");
}

#[test]
fn unknown_problem_and_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbsdej(&["train", "--problem", "example9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("example9"));
    let out = fbsdej(&["train", "--n", "twenty"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fbsdej(&["rate", "--n-list", "10,20"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fbsdej(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbsdej(
        &["train", "--iters", "50", "--runs", "1", "--n", "5", "--lr", "1e4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "training_diverged");
    // the rows before the failure are kept
    let csv = fs::read_to_string(dir.path().join("checkpoints.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn short_training_writes_checkpoints_and_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbsdej(
        &[
            "train",
            "--iters",
            "20",
            "--runs",
            "2",
            "--n",
            "4",
            "--batch",
            "32",
            "--set",
            "train.checkpoint_every=10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("checkpoints.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iteration,loss_mean,y0_mean,y0_std,wall_seconds");
    assert_eq!(rows.len(), 4);
    for r in 0..2 {
        let p = dir.path().join(format!("params_run{r}.txt"));
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("fbsdej-params v1"));
        let e = fbsdej(
            &[
                "errors",
                "--source",
                "params",
                "--params",
                p.to_str().unwrap(),
                "--n",
                "4",
                "--samples",
                "200",
            ],
            &dir.path().join(format!("err{r}")),
        );
        assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    }
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_fbsdej"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train"));
}
