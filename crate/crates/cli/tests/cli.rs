use std::path::Path;
use std::process::{Command, Output};

fn society(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_society")).args(args).output().unwrap()
}

fn short_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("[world]\nnum_agents = 4\nnum_steps = 6\n{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_analyze_and_mbti_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let out = out.to_str().unwrap();

    let r = society(&["run", "--config", &cfg, "--out", out, "--seed", "4"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("6 steps x 4 agents"));

    let before = std::fs::read(Path::new(out).join("metrics/summary.tsv")).unwrap();
    let r = society(&["analyze", out, "--sequential"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(std::fs::read(Path::new(out).join("metrics/summary.tsv")).unwrap(), before);

    let r = society(&["mbti", out, "--checkpoint", "0", "--checkpoint", "6"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("step 0:") && stdout.contains("step 6:"));
}

#[test]
fn configuration_problems_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let out_s = out.to_str().unwrap();

    let missing = tmp.path().join("missing.toml");
    let r = society(&["run", "--config", missing.to_str().unwrap(), "--out", out_s]);
    assert_eq!(r.status.code(), Some(2));

    let bad = short_config(tmp.path(), "bogus_key = 1\n");
    assert_eq!(society(&["run", "--config", &bad, "--out", out_s]).status.code(), Some(2));

    let cfg = short_config(tmp.path(), "");
    let r = society(&["run", "--config", &cfg, "--out", out_s, "--backend", "telepathy"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    assert_eq!(society(&["run", "--config", &cfg, "--out", run_s]).status.code(), Some(0));
    assert_eq!(society(&["mbti", run_s, "--checkpoint", "7"]).status.code(), Some(2));
    assert_eq!(society(&["run", "--config", &cfg, "--out", run_s]).status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let r = society(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--backend",
        "remote",
        "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn sweep_writes_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "[sweep]\nranges = [0, 5]\ntrials_per_range = 2\n");
    let out = tmp.path().join("sweep");
    let r = society(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("4/4 trials completed"));
    assert!(out.join("aggregate/moves.tsv").exists());
    assert_eq!(society(&["analyze", out.to_str().unwrap()]).status.code(), Some(0));
}
