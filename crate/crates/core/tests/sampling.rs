mod common;

use dialect_forge::executor::{RewardError, RewardPolicy};
use dialect_forge::llm::{Matcher, ScriptedModel};
use dialect_forge::model::{Dialect, FailureKind, Provenance, QuestionSource};
use dialect_forge::sampling::{
    augment_questions, build_preference_pairs, pairwise_accuracy, partition, run_sampling, sample_candidates, sample_one, worst_of_n_select,
    PairConfig, SampleConfig, SampleItem, SamplingError,
};

use common::{question, Harness};

const Q: &str = "Which singers are from France?";
const GOLD: &str = "SELECT Name FROM singer WHERE Country = 'France'";

fn scripted(outputs: &[&str]) -> ScriptedModel {
    ScriptedModel::new("t").push(Matcher::Contains(Q.into()), outputs.iter().map(|s| s.to_string()).collect())
}

fn item(gold: Option<&str>) -> SampleItem {
    SampleItem { question: question("fr", Q, "concert_singer"), gold_sql: gold.map(str::to_string) }
}

#[test]
fn policy_follows_gold_availability() {
    let h = Harness::new();
    let outs = [GOLD, "SELECT Name FROM singer"];
    let m = scripted(&outs);
    let with_gold = sample_one(&h.services(&m), &item(Some(GOLD)), Dialect::Postgres, &SampleConfig { n: 2, policy: None, seed: 0 }).unwrap();
    assert_eq!(with_gold.policy, RewardPolicy::ExecAndMatch);
    assert_eq!(with_gold.samples.iter().map(|s| s.reward).collect::<Vec<_>>(), vec![1, 0]);
    assert_eq!(with_gold.samples[1].failure, Some(FailureKind::WrongResult));

    let m = scripted(&outs);
    let no_gold = sample_one(&h.services(&m), &item(None), Dialect::Postgres, &SampleConfig { n: 2, policy: None, seed: 0 }).unwrap();
    assert_eq!(no_gold.policy, RewardPolicy::ExecOnly);
    assert!(no_gold.samples.iter().all(|s| s.reward == 1));
}

#[test]
fn match_policy_without_gold_is_an_error() {
    let h = Harness::new();
    let m = scripted(&[GOLD]);
    let cfg = SampleConfig { n: 1, policy: Some(RewardPolicy::ExecAndMatch), seed: 0 };
    let err = sample_one(&h.services(&m), &item(None), Dialect::Postgres, &cfg).unwrap_err();
    assert!(matches!(err, SamplingError::Reward(RewardError::MissingGold)));
}

#[test]
fn unparseable_output_is_an_extraction_failure() {
    let h = Harness::new();
    let m = scripted(&["Sorry, I cannot answer that.", "```sql\nSELECT Name FROM singer WHERE Country = 'France';\n```"]);
    let svc = h.services(&m);
    let mut c = sample_candidates(&svc, &question("fr", Q, "concert_singer"), 2, Dialect::Postgres, 0).unwrap();
    assert!(!c[0].extraction_ok);
    assert_eq!(c[1].sql, GOLD);
    let (valid, neg) = partition(&h.gateway, Dialect::Postgres, "concert_singer", &mut c, RewardPolicy::ExecOnly, None, 1).unwrap();
    assert_eq!(valid.len(), 1);
    assert_eq!(neg[0].failure, Some(FailureKind::ExtractionFailure));
}

#[test]
fn worst_of_n_prefers_severe_failures_within_the_cap() {
    let h = Harness::new();
    let m = scripted(&[GOLD, "SELECT Name FROM singer", "SELECT Nme FROM singer", "SELECT Name FROM singer WHERE"]);
    let svc = h.services(&m);
    let mut c = sample_candidates(&svc, &question("fr", Q, "concert_singer"), 4, Dialect::Postgres, 0).unwrap();
    let (valid, neg) = partition(&h.gateway, Dialect::Postgres, "concert_singer", &mut c, RewardPolicy::ExecOnly, None, 2).unwrap();
    assert_eq!((valid.len(), neg.len()), (2, 2));
    assert_eq!(worst_of_n_select(&neg, 8).unwrap().failure, Some(FailureKind::Syntax));
    assert_eq!(worst_of_n_select(&neg, 1).unwrap().failure, Some(FailureKind::UnknownObject));
}

#[test]
fn cross_product_pairs_distinct_sql_only() {
    let h = Harness::new();
    let outs = [GOLD, GOLD, "SELECT Name FROM singer", "SELECT Nme FROM singer", "SELECT Name FROM singer"];
    let m = scripted(&outs);
    let log = sample_one(&h.services(&m), &item(Some(GOLD)), Dialect::Postgres, &SampleConfig { n: 5, policy: None, seed: 0 }).unwrap();
    let (valid, neg): (Vec<_>, Vec<_>) = log.samples.iter().cloned().partition(|j| j.reward == 1);
    let q = log.question();
    let one = build_preference_pairs(&q, Dialect::Postgres, &valid, &neg, &PairConfig::default());
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].rejected, "SELECT Nme FROM singer");
    let all = build_preference_pairs(&q, Dialect::Postgres, &valid, &neg, &PairConfig { worst_of: 8, cross_product: true });
    // One distinct chosen SQL against two distinct rejected ones.
    assert_eq!(all.len(), 2);
    assert!(all.iter().all(|p| p.validate().is_ok()));
    let (valid_recs, neg_recs) = log.records();
    assert_eq!(valid_recs.len(), 1);
    assert_eq!(neg_recs.len(), 3);
    assert!(valid_recs.iter().all(|r| r.provenance == Provenance::Sampled));
}

#[test]
fn failed_question_is_reported_not_fatal() {
    let h = Harness::new();
    // Script only covers the first question.
    let m = scripted(&[GOLD]);
    let items = [item(None), SampleItem { question: question("other", "How many stadiums are there?", "concert_singer"), gold_sql: None }];
    let out = run_sampling(&h.services(&m), &items, Dialect::Postgres, &SampleConfig { n: 1, policy: None, seed: 0 }).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.failed_questions.len(), 1);
    assert_eq!(out.failed_questions[0].0, "other");
    let zero = run_sampling(&h.services(&m), &items, Dialect::Postgres, &SampleConfig { n: 0, policy: None, seed: 0 });
    assert!(matches!(zero, Err(SamplingError::ZeroSamples)));
}

#[test]
fn augmentation_dedups_and_grounds() {
    let h = Harness::new();
    let reply = "1. How many singers are from France?\n2. how many  singers are from france?\n- What is the capacity of the stadium?\n\n3) Which concerts were held in 2014?";
    let m = ScriptedModel::new("aug").push(Matcher::Any, vec![reply.into()]);
    let db = h.catalog.get("concert_singer").unwrap().0;
    let qs = augment_questions(&h.services(&m), &db, 3, 1).unwrap();
    let texts: Vec<&str> = qs.iter().map(|q| q.text.as_str()).collect();
    assert_eq!(texts, ["How many singers are from France?", "What is the capacity of the stadium?", "Which concerts were held in 2014?"]);
    assert!(qs.iter().all(|q| q.source == QuestionSource::Augmented && q.id.starts_with("aug:concert_singer:")));
    assert!(qs[0].value_grounded);
    assert!(!qs[1].value_grounded);
}

#[test]
fn scorer_orders_pairs() {
    let h = Harness::new();
    let m = scripted(&[GOLD, "SELECT Nme FROM singer"]);
    let log = sample_one(&h.services(&m), &item(Some(GOLD)), Dialect::Postgres, &SampleConfig { n: 2, policy: None, seed: 0 }).unwrap();
    let (pairs, skipped) = dialect_forge::sampling::pairs_from_log(&[log], &PairConfig::default());
    assert_eq!((pairs.len(), skipped), (1, 0));
    let good = ScriptedModel::new("s").with_score(Q, GOLD, -1.0).with_score(Q, "SELECT Nme FROM singer", -5.0);
    assert_eq!(pairwise_accuracy(&good, &pairs).unwrap(), Some(1.0));
    let tied = ScriptedModel::new("s").with_score(Q, GOLD, -2.0).with_score(Q, "SELECT Nme FROM singer", -2.0);
    assert_eq!(pairwise_accuracy(&tied, &pairs).unwrap(), Some(0.0));
    assert_eq!(pairwise_accuracy(&good, &[]).unwrap(), None);
}
