mod common;

use std::collections::BTreeSet;
use std::path::Path;

use dialect_forge::model::{RunManifest, Stage};
use dialect_forge::pipeline::{Runtime, Severity, StageStatus};

use common::{pipeline_config, runtime, snapshot};

fn without(snap: Vec<(String, Vec<u8>)>, skip: &str) -> Vec<(String, Vec<u8>)> {
    snap.into_iter().filter(|(n, _)| n != skip).collect()
}

fn lines(path: &Path) -> BTreeSet<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn rerun_skips_completed_stages() {
    let dir = tempfile::tempdir().unwrap();
    let rt = runtime(pipeline_config(dir.path()));
    let first = rt.run(None, false).unwrap();
    assert!(first.iter().all(|(_, s)| matches!(s, StageStatus::Ran(_))));
    let before = snapshot(dir.path());

    let again = runtime(pipeline_config(dir.path())).run(None, false).unwrap();
    assert_eq!(again.len(), 5);
    assert!(again.iter().all(|(_, s)| *s == StageStatus::Skipped));
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn forced_rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    runtime(pipeline_config(dir.path())).run(None, false).unwrap();
    let before = without(snapshot(dir.path()), "events.jsonl");
    let got = runtime(pipeline_config(dir.path())).run(Some(&[Stage::Translate]), true).unwrap();
    assert!(matches!(got[0].1, StageStatus::Ran(_)));
    // Downstream stages were invalidated and must be rerun.
    let m: RunManifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.completed, vec![Stage::Translate]);
    runtime(pipeline_config(dir.path())).run(None, false).unwrap();
    assert_eq!(without(snapshot(dir.path()), "events.jsonl"), before);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    runtime(pipeline_config(a.path())).run(None, false).unwrap();
    let mut cfg = pipeline_config(b.path());
    cfg.workers = 1;
    runtime(cfg).run(None, false).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn resumes_after_torn_checkpoint() {
    let (full, crashed) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    runtime(pipeline_config(full.path())).run(None, false).unwrap();

    let out = crashed.path();
    runtime(pipeline_config(out)).run(Some(&[Stage::Translate, Stage::Sample]), false).unwrap();
    // Pretend the process died while sampling: half the checkpoint is
    // gone, the last kept line is torn and the stage is not complete.
    let ckpt = out.join("sample/progress.jsonl");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let kept: Vec<&str> = text.lines().collect();
    assert!(kept.len() > 4);
    let mut torn = kept[..kept.len() / 2].join("\n");
    torn.push('\n');
    torn.push_str(&kept[kept.len() / 2][..20]);
    std::fs::write(&ckpt, torn).unwrap();
    for f in ["samples.jsonl", "valid.jsonl", "neg.jsonl", "retention.csv"] {
        let _ = std::fs::remove_file(out.join("sample").join(f));
    }
    let mpath = out.join("manifest.json");
    let mut m: RunManifest = serde_json::from_slice(&std::fs::read(&mpath).unwrap()).unwrap();
    m.completed.retain(|s| *s == Stage::Translate);
    m.stage = Some(Stage::Sample);
    std::fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();

    let report = runtime(pipeline_config(out)).run(None, false).unwrap();
    assert_eq!(report[0], (Stage::Translate, StageStatus::Skipped));
    assert!(matches!(report[1].1, StageStatus::Ran(_)));

    // Items between the checkpoint and the crash log their events twice.
    assert_eq!(without(snapshot(out), "events.jsonl"), without(snapshot(full.path()), "events.jsonl"));
    assert_eq!(lines(&out.join("events.jsonl")), lines(&full.path().join("events.jsonl")));
}

#[test]
fn changed_config_starts_over() {
    let dir = tempfile::tempdir().unwrap();
    runtime(pipeline_config(dir.path())).run(None, false).unwrap();
    let mut cfg = pipeline_config(dir.path());
    cfg.seed += 1;
    let report = runtime(cfg).run(None, false).unwrap();
    assert!(report.iter().all(|(_, s)| matches!(s, StageStatus::Ran(_))));
}

#[test]
fn missing_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_config(dir.path());
    cfg.backends.retain(|b| b.dialect != dialect_forge::model::Dialect::Mysql);
    let (rt, diags) = Runtime::prepare(cfg);
    assert!(rt.is_none());
    let errors: Vec<String> = diags.iter().filter(|d| d.severity == Severity::Error).map(|d| d.to_string()).collect();
    assert!(errors.iter().any(|e| e.contains("mysql")), "{:?}", errors);
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn unconfigured_stage_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_config(dir.path());
    cfg.evaluate = None;
    let rt = runtime(cfg);
    assert!(!rt.configured_stages().contains(&Stage::Evaluate));
    let err = rt.run(Some(&[Stage::Evaluate]), false).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn artifacts_cover_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    runtime(pipeline_config(dir.path())).run(None, false).unwrap();
    let names: BTreeSet<String> = snapshot(dir.path()).into_iter().map(|(n, _)| n).collect();
    for f in [
        "manifest.json",
        "events.jsonl",
        "translate/d_trans.jsonl",
        "translate/unresolved.jsonl",
        "translate/stats.json",
        "sample/samples.jsonl",
        "sample/valid.jsonl",
        "sample/neg.jsonl",
        "sample/retention.csv",
        "prefs/preferences.jsonl",
        "eval/report.json",
        "eval/report.txt",
        "report/accuracy.csv",
        "report/cost.csv",
        "report/dataset_stats.txt",
    ] {
        assert!(names.contains(f), "missing {}", f);
    }
    let d_trans = common::read_records(&dir.path().join("translate/d_trans.jsonl"));
    assert!(d_trans.iter().all(|r| r.status == dialect_forge::model::RecordStatus::Valid));
    let prefs = dialect_forge::model::read_preferences(&dir.path().join("prefs/preferences.jsonl")).unwrap();
    assert!(prefs.iter().all(|p| p.validate().is_ok()));
    let retention = std::fs::read_to_string(dir.path().join("sample/retention.csv")).unwrap();
    let rates: Vec<f64> = retention.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), 4);
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
}
