use std::path::PathBuf;

use dialect_forge::engine::{load_corpus, load_database, run_case};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn golden_corpus_passes() {
    let cases = load_corpus(&fixtures().join("conformance.jsonl")).unwrap();
    assert!(cases.len() >= 30);
    let lookup = |id: &str| load_database(&fixtures().join("db").join(format!("{}.json", id))).ok();
    let failures: Vec<String> = cases
        .iter()
        .map(|c| run_case(c, &lookup))
        .filter(|o| !o.passed())
        .map(|o| format!("{}: expected {}, got {}", o.name, o.expected, o.actual))
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn corpus_names_are_unique() {
    let cases = load_corpus(&fixtures().join("conformance.jsonl")).unwrap();
    let mut names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    names.sort();
    let n = names.len();
    names.dedup();
    assert_eq!(names.len(), n);
}
