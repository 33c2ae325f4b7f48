use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialect-forge")).args(args).env_remove("DIALECT_FORGE_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config() -> String {
    fixtures().join("pipeline.toml").display().to_string()
}

#[test]
fn estimate_cost() {
    let o = cli(&["estimate-cost", "--q", "1000", "--p-llm", "0.56"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1634");
    let o = cli(&["estimate-cost", "--q", "1000", "--p-llm", "0.56", "--p-prefilter", "0.35"]);
    assert_eq!(stdout(&o).trim(), "1062");
    assert_eq!(cli(&["estimate-cost", "--q", "10", "--p-llm", "1.5"]).status.code(), Some(1));
}

#[test]
fn run_then_rerun_skips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = cli(&["run", "--config", &config(), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" done")).count(), 5);
    let o = cli(&["run", "--config", &config(), "--out", &out]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("skipped")).count(), 5);

    let copy = dir.path().join("copy.txt");
    let o = cli(&["evaluate", "--config", &config(), "--out", &out, "--force", "--report", &copy.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(dir.path().join("eval/report.txt")).unwrap());
}

#[test]
fn validate_reports_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["validate", "--config", &config()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!stdout(&o).is_empty());
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(cli(&["run", "--config", "/nonexistent/pipeline.toml"]).status.code(), Some(1));
    assert_eq!(cli(&["run"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixtures().join("pipeline.toml")).unwrap();
    let no_mysql = text.replace("[[backends]]\ndialect = \"mysql\"\nkind = \"embedded\"\n", "");
    assert_ne!(no_mysql, text);
    // Relative paths in the config resolve against its own directory.
    let cfg = fixtures().join("no_mysql.tmp.toml");
    std::fs::write(&cfg, no_mysql).unwrap();
    let o = cli(&["run", "--config", &cfg.display().to_string(), "--out", &dir.path().display().to_string()]);
    std::fs::remove_file(&cfg).unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mysql"));
}

#[test]
fn stage_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let outputs = dir.path().join("outputs.jsonl");
    let line = "{\"id\":\"b_pg_1\",\"output\":\"SELECT 1\"}\n";
    std::fs::write(&outputs, line.repeat(2)).unwrap();
    let o = cli(&[
        "evaluate",
        "--config",
        &config(),
        "--out",
        &dir.path().join("out").display().to_string(),
        "--outputs",
        &outputs.display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
