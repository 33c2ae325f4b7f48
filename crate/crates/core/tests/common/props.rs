//! Property checks shared by the invariant suite and the acceptance target.
//! Each runs a fixed-seed proptest runner and reports the first minimal
//! counterexample as text.

use std::collections::HashMap;
use std::fmt::Debug;

use dialect_forge::engine::{ResultTable, Value};
use dialect_forge::executor::{compare_results, reward, ComparePolicy, ExecReport, RewardPolicy};
use dialect_forge::llm::{extract_sql, Matcher, ScriptedModel};
use dialect_forge::model::{
    parse_preference, parse_record, serialize_preference, serialize_record, DatasetRecord, Dialect, ErrorClass, ExecStatus, FailureKind,
    PreferenceRecord, Provenance, RecordStatus, ReportSummary, ALL_DIALECTS,
};
use dialect_forge::sampling::{empirical_retention, extraction_failure_report, partition, retention_rate, Candidate, Gold, Judged, QuestionSamples};
use dialect_forge::translate::{run_bootstrap, SourcePair, TranslateConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::Harness;

pub const CASES: u32 = 1000;

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: Debug,
{
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

// Candidate pool over concert_singer. Gold is the first entry.
const GOLD: &str = "SELECT Name FROM singer WHERE Country = 'France'";
const POOL: [&str; 7] = [
    GOLD,
    "SELECT Name FROM singer WHERE Country = 'France' ORDER BY Name",
    "SELECT Name FROM singer",
    "SELECT Nme FROM singer",
    "SELEC Name FROM singer",
    "I am not sure which table holds this.",
    "```sql\nSELECT Name FROM singer WHERE Country = 'France'\n```",
];

fn candidate(i: usize, raw: &str, pre_run: Option<ExecReport>) -> Candidate {
    match extract_sql(raw) {
        Ok(sql) => Candidate { sample_index: i, raw: raw.into(), sql, extraction_ok: true, report: pre_run },
        Err(_) => Candidate { sample_index: i, raw: raw.into(), sql: raw.into(), extraction_ok: false, report: Some(extraction_failure_report()) },
    }
}

fn indices(j: &[Judged]) -> Vec<usize> {
    j.iter().map(|x| x.sample_index).collect()
}

/// Every candidate lands on exactly one side, rewards agree with the side,
/// and exec-and-match never keeps what exec-only drops.
pub fn partition_completeness(h: &Harness, cases: u32) -> Result<(), String> {
    let gold = Gold::from_sql(&h.gateway, GOLD, Dialect::Postgres, "concert_singer").unwrap().expect("gold runs");
    let reports: Vec<ExecReport> = POOL
        .iter()
        .map(|raw| {
            let sql = extract_sql(raw).unwrap_or_default();
            h.gateway.run_default(&sql, Dialect::Postgres, "concert_singer").unwrap()
        })
        .collect();
    let strat = prop::collection::vec((0..POOL.len(), any::<bool>()), 1..=16);
    check(cases, strat, |picks| {
        let build =
            || -> Vec<Candidate> { picks.iter().enumerate().map(|(i, &(k, pre))| candidate(i, POOL[k], pre.then(|| reports[k].clone()))).collect() };
        let mut split = HashMap::new();
        for policy in [RewardPolicy::ExecOnly, RewardPolicy::ExecAndMatch] {
            let mut c = build();
            let (valid, neg) = partition(&h.gateway, Dialect::Postgres, "concert_singer", &mut c, policy, Some(&gold), 2)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(valid.len() + neg.len(), picks.len());
            let mut all = indices(&valid);
            all.extend(indices(&neg));
            all.sort_unstable();
            prop_assert_eq!(all, (0..picks.len()).collect::<Vec<_>>());
            prop_assert!(valid.iter().all(|j| j.reward == 1 && j.failure.is_none()));
            prop_assert!(neg.iter().all(|j| j.reward == 0 && j.failure.is_some()));
            prop_assert!(neg.iter().filter(|j| !j.extraction_ok).all(|j| j.failure == Some(FailureKind::ExtractionFailure)));
            split.insert(policy, indices(&valid));
        }
        let loose = &split[&RewardPolicy::ExecOnly];
        prop_assert!(split[&RewardPolicy::ExecAndMatch].iter().all(|i| loose.contains(i)));
        Ok(())
    })
}

fn cell() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        (-3i64..4).prop_map(Value::Int),
        (-12i32..13).prop_map(|q| Value::Float(q as f64 * 0.25)),
        prop::sample::select(vec!["a", "b", "France", ""]).prop_map(|s| Value::Text(s.into())),
    ]
}

fn table(max_rows: usize) -> impl Strategy<Value = ResultTable> {
    (1usize..3).prop_flat_map(move |w| {
        prop::collection::vec(prop::collection::vec(cell(), w), 0..=max_rows)
            .prop_map(move |rows| ResultTable { columns: (0..w).map(|i| format!("c{}", i)).collect(), rows })
    })
}

fn exec_report() -> impl Strategy<Value = ExecReport> {
    prop_oneof![
        table(3).prop_map(|t| ExecReport::ok("p", t, 0.0)),
        Just(ExecReport::error("p", ErrorClass::Syntax, "syntax error", 0.0)),
        Just(ExecReport::error("p", ErrorClass::UnknownObject, "no such column", 0.0)),
    ]
}

fn compare_policy() -> impl Strategy<Value = ComparePolicy> {
    (any::<bool>(), prop::sample::select(vec![0.0, 1e-6])).prop_map(|(order_sensitive, float_tolerance)| ComparePolicy {
        order_sensitive,
        float_tolerance,
        null_equals_null: true,
    })
}

/// exec-and-match reward never exceeds exec-only reward.
pub fn reward_ordering(cases: u32) -> Result<(), String> {
    check(cases, (exec_report(), table(3), compare_policy()), |(rep, gold, cmp)| {
        let strict = reward(&rep, Some(&gold), RewardPolicy::ExecAndMatch, &cmp).unwrap();
        let loose = reward(&rep, Some(&gold), RewardPolicy::ExecOnly, &cmp).unwrap();
        prop_assert!(strict <= loose, "match {} > exec {}", strict, loose);
        prop_assert_eq!(loose, (rep.status == ExecStatus::Ok) as u8);
        Ok(())
    })
}

/// Reorders rows and respells integral numbers as floats; the result must
/// compare equal to the input whenever order does not matter.
fn variant(t: &ResultTable, perm_seed: u64, respell: bool) -> ResultTable {
    let mut rows = t.rows.clone();
    let n = rows.len();
    if n > 1 {
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            rows.swap(i, (s >> 33) as usize % (i + 1));
        }
    }
    if respell {
        for v in rows.iter_mut().flatten() {
            if let Value::Int(i) = v {
                *v = Value::Float(*i as f64);
            }
        }
    }
    ResultTable { columns: t.columns.iter().map(|c| format!("{}_x", c)).collect(), rows }
}

/// Reflexive, symmetric and transitive, for related and unrelated tables.
pub fn compare_equivalence(cases: u32) -> Result<(), String> {
    let strat = (table(4), table(4), any::<u64>(), any::<u64>(), any::<bool>(), any::<bool>(), compare_policy());
    check(cases, strat, |(a, other, s1, s2, r1, r2, cmp)| {
        let unordered = ComparePolicy { order_sensitive: false, ..cmp };
        let b = variant(&a, s1, r1);
        let c = variant(&b, s2, r2);
        prop_assert!(compare_results(&a, &a, &cmp));
        prop_assert!(compare_results(&a, &b, &unordered));
        prop_assert!(compare_results(&a, &c, &unordered));
        for p in [cmp, unordered] {
            for (x, y) in [(&a, &b), (&a, &other), (&b, &other), (&c, &other)] {
                prop_assert_eq!(compare_results(x, y, &p), compare_results(y, x, &p));
            }
            for (x, y, z) in [(&a, &b, &c), (&a, &other, &b), (&other, &a, &c), (&b, &a, &other)] {
                if compare_results(x, y, &p) && compare_results(y, z, &p) {
                    prop_assert!(compare_results(x, z, &p));
                }
            }
        }
        Ok(())
    })
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![any::<String>(), "[a-z \\n\\t\"'\\\\;]{0,24}", Just(String::new())]
}

fn record() -> impl Strategy<Value = DatasetRecord> {
    let fields = (
        text().prop_filter("id must be non-empty", |s| !s.is_empty()),
        text(),
        text(),
        prop::sample::select(ALL_DIALECTS.to_vec()),
        text(),
        text(),
        any::<u32>(),
        prop::sample::select(vec![Provenance::Translated, Provenance::Sampled, Provenance::Augmented, Provenance::Manual]),
        prop::sample::select(vec![RecordStatus::Untested, RecordStatus::Valid, RecordStatus::Invalid]),
    );
    fields.prop_map(|(id, question_id, question, dialect, db_id, sql, round, provenance, status)| DatasetRecord {
        db_id,
        dialect,
        id,
        provenance,
        question,
        question_id,
        round,
        sql,
        status,
    })
}

fn failure() -> impl Strategy<Value = Option<FailureKind>> {
    prop::option::of(prop::sample::select(vec![
        FailureKind::WrongResult,
        FailureKind::Runtime,
        FailureKind::Timeout,
        FailureKind::UnknownObject,
        FailureKind::Type,
        FailureKind::StrictGroupBy,
        FailureKind::Syntax,
        FailureKind::DialectViolation,
        FailureKind::ExtractionFailure,
    ]))
}

/// Records and preference pairs survive a write/read cycle on one line.
pub fn record_round_trip(cases: u32) -> Result<(), String> {
    let pref = (record(), text(), text(), failure(), any::<bool>());
    check(cases, pref, |(r, chosen, rejected, fail, rejected_ran)| {
        let line = serialize_record(&r);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_record(&line).map_err(|e| TestCaseError::fail(e.to_string()))?, r.clone());

        let p = PreferenceRecord {
            id: r.id.clone(),
            question_id: r.question_id.clone(),
            question: r.question.clone(),
            db_id: r.db_id.clone(),
            dialect: r.dialect,
            rejected: if rejected == chosen { format!("{} ", rejected) } else { rejected },
            chosen,
            chosen_report: ReportSummary { status: ExecStatus::Ok, failure: None, reward: 1 },
            rejected_report: ReportSummary { status: if rejected_ran { ExecStatus::Ok } else { ExecStatus::Error }, failure: fail, reward: 0 },
        };
        let line = serialize_preference(&p).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_preference(&line).map_err(|e| TestCaseError::fail(e.to_string()))?, p);
        Ok(())
    })
}

fn judged(i: usize, ok: bool) -> Judged {
    Judged {
        sample_index: i,
        sql: format!("SELECT {}", i),
        extraction_ok: true,
        status: if ok { ExecStatus::Ok } else { ExecStatus::Error },
        error_class: None,
        raw_error: None,
        reward: ok as u8,
        failure: (!ok).then_some(FailureKind::Syntax),
    }
}

/// The closed form and the empirical curve both grow with n; the closed
/// form is bounded by [p, 1].
pub fn retention_monotone(cases: u32) -> Result<(), String> {
    let logs = prop::collection::vec(prop::collection::vec(any::<bool>(), 16), 1..30);
    check(cases, (0.0f64..=1.0, 1u32..64, 1u32..64, logs), |(p, a, b, log)| {
        let (lo, hi) = (a.min(b), a.max(b));
        let (rl, rh) = (retention_rate(p, lo).unwrap(), retention_rate(p, hi).unwrap());
        prop_assert!(rl <= rh + 1e-12, "r({}, {}) = {} > r({}, {}) = {}", p, lo, rl, p, hi, rh);
        prop_assert!(rl >= p - 1e-12 && rh <= 1.0 + 1e-12);

        let log: Vec<QuestionSamples> = log
            .iter()
            .enumerate()
            .map(|(q, draws)| QuestionSamples {
                question_id: format!("q{}", q),
                question: String::new(),
                db_id: String::new(),
                dialect: Dialect::Postgres,
                policy: RewardPolicy::ExecOnly,
                source: dialect_forge::model::QuestionSource::Seed,
                samples: draws.iter().enumerate().map(|(i, &ok)| judged(i, ok)).collect(),
            })
            .collect();
        let ns: Vec<usize> = (1..=16).collect();
        let curve = empirical_retention(&log, &ns).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1), "{:?}", curve);
        Ok(())
    })
}

const BAD: [&str; 4] =
    ["SELECT count(*) FROM singr", "SELEC count(*) FROM singer", "I could not translate this query.", "SELECT count(Nme) FROM singer"];

/// Randomised translation scripts: pair i fails `fails[i]` times before a
/// correct answer. Failures per round must never grow, and each round's
/// count must equal the number of pairs still failing.
pub fn translate_rounds_monotone(h: &Harness, cases: u32) -> Result<(), String> {
    let strat = (prop::collection::vec((0usize..5, 0..BAD.len()), 1..=5), 1usize..=4, any::<bool>());
    check(cases, strat, |(jobs, max_rounds, two_targets)| {
        let targets: Vec<Dialect> = if two_targets { vec![Dialect::Postgres, Dialect::Mysql] } else { vec![Dialect::Postgres] };
        let mut model = ScriptedModel::new("monotone");
        let mut pairs = Vec::new();
        for (i, &(fails, bad)) in jobs.iter().enumerate() {
            let tag = format!("[t{}]", i);
            pairs.push(SourcePair {
                id: format!("t{}", i),
                question: format!("{} How many singers are there?", tag),
                sql: "SELECT count(*) FROM singer".into(),
                db_id: "concert_singer".into(),
                source_dialect: Dialect::Sqlite,
            });
            for t in &targets {
                let m = Matcher::All(vec![tag.clone(), format!("to {} SQL", t.display_name())]);
                for k in 0..fails {
                    model = model.push(m.clone(), vec![BAD[(bad + k) % BAD.len()].to_string()]);
                }
                model = model.push(m, vec!["SELECT count(*) FROM singer".into()]);
            }
        }
        let svc = h.services(&model);
        let cfg = TranslateConfig { max_rounds, ..TranslateConfig::default() };
        let out = run_bootstrap(&svc, &pairs, &targets, &cfg, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for t in &targets {
            let s = &out.stats[t];
            prop_assert!(s.failed.windows(2).all(|w| w[0] >= w[1]), "{:?}", s.failed);
            let expect: Vec<usize> = (0..max_rounds).map(|r| jobs.iter().filter(|(f, _)| *f > r).count()).take_while(|&c| c > 0).collect();
            let mut got = s.failed.clone();
            while got.last() == Some(&0) && got.len() > expect.len() {
                got.pop();
            }
            prop_assert_eq!(got, expect);
            prop_assert_eq!(s.proposed[0], jobs.len());
            for r in 1..s.proposed.len() {
                prop_assert_eq!(s.proposed[r], s.failed[r - 1]);
            }
            prop_assert_eq!(s.unresolved, jobs.iter().filter(|(f, _)| *f >= max_rounds).count());
        }
        for r in &out.records {
            let fails = jobs[r.question_id[1..].parse::<usize>().unwrap()].0;
            prop_assert_eq!(r.round as usize, (fails + 1).min(max_rounds));
            prop_assert_eq!(r.status == RecordStatus::Valid, fails < max_rounds);
        }
        Ok(())
    })
}
