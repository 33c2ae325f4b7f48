//! Translation bootstrapping: propose target-dialect SQL, execute it, feed
//! the error back and try again, up to a round cap.

use std::collections::BTreeMap;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::executor::{reward, ComparePolicy, ExecReport, GatewayError, RewardPolicy};
use crate::llm::{extract_sql, generate, render_translation_prompt, GenRequest, LlmError};
use crate::model::{DatasetRecord, Dialect, ErrorClass, ExecStatus, Provenance, RecordStatus};
use crate::services::{derive_seed, parallel_map, Services};

/// A question with SQL in the source dialect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePair {
    pub id: String,
    pub question: String,
    pub sql: String,
    pub db_id: String,
    #[serde(default = "sqlite")]
    pub source_dialect: Dialect,
}

fn sqlite() -> Dialect {
    Dialect::Sqlite
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub sql: String,
    pub report: ExecReport,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationOutcome {
    pub record: DatasetRecord,
    pub attempts: Vec<Attempt>,
    pub rounds_used: usize,
    pub success: bool,
    pub solved_by_prefilter: bool,
    /// Set when the item was abandoned (model or gateway failure).
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslateConfig {
    pub max_rounds: usize,
    /// exec-and-match compares against the source query's result on the
    /// source dialect.
    pub reward_policy: RewardPolicy,
    pub seed: u64,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        TranslateConfig { max_rounds: 3, reward_policy: RewardPolicy::ExecOnly, seed: 0 }
    }
}

/// A rule-based translator tried before the model.
pub trait Prefilter: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, sql: &str, source: Dialect, target: Dialect) -> Option<String>;
}

/// Hands the source SQL through unchanged.
pub struct IdentityPrefilter;

impl Prefilter for IdentityPrefilter {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, sql: &str, _source: Dialect, _target: Dialect) -> Option<String> {
        Some(sql.to_string())
    }
}

/// External transpiler: gets SQL on stdin, prints SQL on stdout. `{source}`
/// and `{target}` in arguments become dialect tags.
pub struct CommandPrefilter {
    argv: Vec<String>,
    timeout: Duration,
}

impl CommandPrefilter {
    pub fn new(command: &str) -> Option<Self> {
        let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        (!argv.is_empty()).then_some(CommandPrefilter { argv, timeout: Duration::from_secs(30) })
    }
}

impl Prefilter for CommandPrefilter {
    fn name(&self) -> &str {
        &self.argv[0]
    }

    fn translate(&self, sql: &str, source: Dialect, target: Dialect) -> Option<String> {
        let args: Vec<String> = self.argv.iter().map(|a| a.replace("{source}", source.tag()).replace("{target}", target.tag())).collect();
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| log::warn!("prefilter {}: {}", args[0], e))
            .ok()?;
        {
            use std::io::Write;
            let mut stdin = child.stdin.take()?;
            stdin.write_all(sql.as_bytes()).ok()?;
        }
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(child.wait_with_output());
        });
        let out = rx.recv_timeout(self.timeout).ok()?.ok()?;
        let text = String::from_utf8_lossy(&out.stdout).trim().to_string();
        (out.status.success() && !text.is_empty()).then_some(text)
    }
}

/// Model output in the postgres format carries the db id after a tab.
fn strip_db_suffix(sql: &str, db_id: &str) -> String {
    let t = sql.trim();
    if !db_id.is_empty() {
        if let Some(head) = t.strip_suffix(db_id) {
            if head.ends_with(char::is_whitespace) {
                return head.trim_end().trim_end_matches(';').trim_end().to_string();
            }
        }
    }
    t.to_string()
}

fn extraction_failure(raw: &str) -> ExecReport {
    ExecReport::error(
        "extract",
        ErrorClass::Syntax,
        format!("no SQL statement found in model output: {:?}", raw.chars().take(200).collect::<String>()),
        0.0,
    )
}

fn make_record(pair: &SourcePair, target: Dialect, sql: &str, rounds: usize, ok: bool) -> DatasetRecord {
    DatasetRecord {
        db_id: pair.db_id.clone(),
        dialect: target,
        id: format!("{}:{}", pair.id, target.tag()),
        provenance: Provenance::Translated,
        question: pair.question.clone(),
        question_id: pair.id.clone(),
        round: rounds as u32,
        sql: sql.to_string(),
        status: if ok { RecordStatus::Valid } else { RecordStatus::Invalid },
    }
}

fn run_attempt(
    svc: &Services,
    sql: &str,
    pair: &SourcePair,
    target: Dialect,
    cfg: &TranslateConfig,
    gold: Option<&crate::engine::ResultTable>,
) -> Result<Attempt, GatewayError> {
    let report = svc.gateway.run_default(sql, target, &pair.db_id)?;
    let cmp = ComparePolicy::for_gold_sql(&pair.sql, pair.source_dialect);
    let r = match (cfg.reward_policy, gold) {
        (RewardPolicy::ExecAndMatch, Some(g)) => reward(&report, Some(g), RewardPolicy::ExecAndMatch, &cmp).unwrap_or(0),
        _ => report.is_ok() as u8,
    };
    Ok(Attempt { sql: sql.to_string(), report, reward: r })
}

pub fn translate_with_feedback(
    svc: &Services,
    pair: &SourcePair,
    target: Dialect,
    cfg: &TranslateConfig,
    prefilter: Option<&dyn Prefilter>,
) -> TranslationOutcome {
    let max_rounds = cfg.max_rounds.max(1);
    let mut attempts: Vec<Attempt> = Vec::new();
    let finish = |attempts: Vec<Attempt>, aborted: Option<String>, by_prefilter: bool| {
        let success = attempts.last().is_some_and(|a| a.reward == 1) && aborted.is_none();
        let sql = attempts.last().map(|a| a.sql.clone()).unwrap_or_default();
        TranslationOutcome {
            record: make_record(pair, target, &sql, attempts.len(), success),
            rounds_used: attempts.len(),
            attempts,
            success,
            solved_by_prefilter: by_prefilter,
            aborted,
        }
    };

    let gold = match cfg.reward_policy {
        RewardPolicy::ExecAndMatch => match svc.gateway.run_default(&pair.sql, pair.source_dialect, &pair.db_id) {
            Ok(r) if r.is_ok() => r.result,
            Ok(r) => return finish(attempts, Some(format!("source query fails: {}", r.raw_error.unwrap_or_default())), false),
            Err(e) => return finish(attempts, Some(e.to_string()), false),
        },
        RewardPolicy::ExecOnly => None,
    };

    if let Some(pf) = prefilter {
        if let Some(sql) = pf.translate(&pair.sql, pair.source_dialect, target) {
            match run_attempt(svc, &sql, pair, target, cfg, gold.as_ref()) {
                Ok(a) if a.reward == 1 => return finish(vec![a], None, true),
                Ok(_) => {}
                Err(e) => return finish(attempts, Some(e.to_string()), false),
            }
        }
    }

    let schema = svc.schema(&pair.db_id);
    for round in 1..=max_rounds {
        let prior: Vec<(String, String)> = attempts
            .iter()
            .map(|a| (a.sql.clone(), a.report.raw_error.clone().unwrap_or_else(|| "result does not match the source query".into())))
            .collect();
        let prompt = match render_translation_prompt(svc.templates, &pair.sql, &pair.question, &schema, &pair.db_id, target, &prior) {
            Ok(p) => p,
            Err(e) => return finish(attempts, Some(e.to_string()), false),
        };
        let req = GenRequest::with_decoding(prompt, 1, &svc.decoding).with_seed(derive_seed(cfg.seed, &[&pair.id, target.tag(), &round.to_string()]));
        let raw = match generate(svc.model, &req, &svc.retry) {
            Ok(mut v) => v.remove(0),
            Err(e) => return finish(attempts, Some(e.to_string()), false),
        };
        let attempt = match extract_sql(&raw) {
            Ok(sql) => {
                let sql = strip_db_suffix(&sql, &pair.db_id);
                match run_attempt(svc, &sql, pair, target, cfg, gold.as_ref()) {
                    Ok(a) => a,
                    Err(e) => return finish(attempts, Some(e.to_string()), false),
                }
            }
            Err(_) => Attempt { sql: raw.trim().to_string(), report: extraction_failure(&raw), reward: 0 },
        };
        let done = attempt.reward == 1;
        attempts.push(attempt);
        if done {
            break;
        }
    }
    finish(attempts, None, false)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub items: usize,
    pub prefilter_solved: usize,
    /// Items sent to the model in each round.
    pub proposed: Vec<usize>,
    /// Items still failing after each round.
    pub failed: Vec<usize>,
    pub aborted: usize,
    pub unresolved: usize,
}

impl IterationStats {
    pub fn add(&mut self, j: &JobSummary) {
        self.items += 1;
        if j.solved_by_prefilter {
            self.prefilter_solved += 1;
            return;
        }
        let rounds = j.rounds_used;
        if self.proposed.len() < rounds {
            self.proposed.resize(rounds, 0);
            self.failed.resize(rounds, 0);
        }
        for r in 0..rounds {
            self.proposed[r] += 1;
            if r + 1 < rounds || !j.success {
                self.failed[r] += 1;
            }
        }
        if j.aborted.is_some() {
            self.aborted += 1;
        }
        if !j.success {
            self.unresolved += 1;
        }
    }
}

/// What a translation job leaves behind once its timing is dropped. This is
/// the unit the pipeline checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub record: DatasetRecord,
    pub rounds_used: usize,
    pub success: bool,
    pub solved_by_prefilter: bool,
    pub aborted: Option<String>,
    pub unresolved: Option<UnresolvedItem>,
}

impl JobSummary {
    pub fn new(pair: &SourcePair, o: &TranslationOutcome) -> Self {
        JobSummary {
            record: o.record.clone(),
            rounds_used: o.rounds_used,
            success: o.success,
            solved_by_prefilter: o.solved_by_prefilter,
            aborted: o.aborted.clone(),
            unresolved: (!o.success).then(|| UnresolvedItem::from_outcome(pair, o)),
        }
    }
}

/// Review-file entry for an item that never produced valid SQL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvedItem {
    pub id: String,
    pub question_id: String,
    pub dialect: Dialect,
    pub db_id: String,
    pub question: String,
    pub source_sql: String,
    pub attempts: Vec<AttemptSummary>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub sql: String,
    pub status: ExecStatus,
    pub error_class: Option<ErrorClass>,
    pub raw_error: Option<String>,
}

impl UnresolvedItem {
    fn from_outcome(pair: &SourcePair, o: &TranslationOutcome) -> Self {
        UnresolvedItem {
            id: o.record.id.clone(),
            question_id: pair.id.clone(),
            dialect: o.record.dialect,
            db_id: pair.db_id.clone(),
            question: pair.question.clone(),
            source_sql: pair.sql.clone(),
            attempts: o
                .attempts
                .iter()
                .map(|a| AttemptSummary {
                    sql: a.sql.clone(),
                    status: a.report.status,
                    error_class: a.report.error_class,
                    raw_error: a.report.raw_error.clone(),
                })
                .collect(),
            aborted: o.aborted.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BootstrapOutput {
    /// One per (pair, target), pair-major order.
    pub records: Vec<DatasetRecord>,
    pub stats: BTreeMap<Dialect, IterationStats>,
    pub unresolved: Vec<UnresolvedItem>,
}

impl BootstrapOutput {
    pub fn from_summaries(targets: &[Dialect], summaries: impl IntoIterator<Item = JobSummary>) -> Self {
        let mut out = BootstrapOutput::default();
        for t in targets {
            out.stats.entry(*t).or_default();
        }
        for j in summaries {
            out.stats.entry(j.record.dialect).or_default().add(&j);
            if let Some(u) = j.unresolved {
                out.unresolved.push(u);
            }
            out.records.push(j.record);
        }
        out
    }

    /// The verified translations only.
    pub fn d_trans(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Valid)
    }
}

pub fn run_bootstrap(
    svc: &Services,
    pairs: &[SourcePair],
    targets: &[Dialect],
    cfg: &TranslateConfig,
    prefilter: Option<&dyn Prefilter>,
) -> Result<BootstrapOutput, LlmError> {
    for t in targets {
        if svc.gateway.backend(*t).is_none() {
            return Err(LlmError::InvalidRequest(format!("no backend for target dialect {}", t)));
        }
        if *t == Dialect::Sqlite {
            return Err(LlmError::InvalidRequest("sqlite is the source dialect, not a translation target".into()));
        }
    }
    let jobs: Vec<(usize, Dialect)> = (0..pairs.len()).flat_map(|i| targets.iter().map(move |t| (i, *t))).collect();
    let outcomes = parallel_map(&jobs, svc.workers, |_, (i, t)| translate_with_feedback(svc, &pairs[*i], *t, cfg, prefilter));
    let summaries: Vec<JobSummary> = jobs.iter().zip(&outcomes).map(|((i, _), o)| JobSummary::new(&pairs[*i], o)).collect();
    let out = BootstrapOutput::from_summaries(targets, summaries);
    for (d, s) in &out.stats {
        log::info!("translate {}: {} items, failed per round {:?}, unresolved {}", d, s.items, s.failed, s.unresolved);
    }
    Ok(out)
}
