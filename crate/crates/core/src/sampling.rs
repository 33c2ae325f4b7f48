//! Execution-based rejection sampling, best/worst-of-N selection, preference
//! pairs, retention estimates and question augmentation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{InMemoryDb, ResultTable, Value};
use crate::executor::{reward, ComparePolicy, ExecReport, Gateway, GatewayError, RewardError, RewardPolicy};
use crate::llm::{extract_sql, generate, render_question_gen_prompt, render_text2sql_prompt, GenRequest, GenerationModel, LlmError, PromptError};
use crate::model::{
    DatasetRecord, Dialect, ErrorClass, ExecStatus, FailureKind, NLQuestion, PreferenceRecord, Provenance, QuestionSource, RecordStatus,
    ReportSummary,
};
use crate::services::{derive_seed, parallel_map, Services};

/// One drawn sample before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample_index: usize,
    pub raw: String,
    pub sql: String,
    pub extraction_ok: bool,
    pub report: Option<ExecReport>,
}

/// A scored sample. Timing and result rows are dropped so logs are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judged {
    pub sample_index: usize,
    pub sql: String,
    pub extraction_ok: bool,
    pub status: ExecStatus,
    pub error_class: Option<ErrorClass>,
    pub raw_error: Option<String>,
    pub reward: u8,
    pub failure: Option<FailureKind>,
}

impl Judged {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary { status: self.status, failure: self.failure, reward: self.reward }
    }
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error(transparent)]
    Model(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("n must be at least 1")]
    ZeroSamples,
    #[error("database {0} is empty")]
    EmptyDatabase(String),
}

pub fn extraction_failure_report() -> ExecReport {
    ExecReport::error("extract", ErrorClass::Syntax, "no SQL statement found in model output", 0.0)
}

/// Draws `n` completions for one question and extracts SQL from each.
pub fn sample_candidates(svc: &Services, question: &NLQuestion, n: usize, dialect: Dialect, seed: u64) -> Result<Vec<Candidate>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::ZeroSamples);
    }
    let prompt = render_text2sql_prompt(svc.templates, &question.text, &svc.schema(&question.db_id), &question.db_id, dialect)?;
    let req = GenRequest::with_decoding(prompt, n, &svc.decoding).with_seed(seed);
    let outs = generate(svc.model, &req, &svc.retry)?;
    Ok(outs
        .into_iter()
        .enumerate()
        .map(|(i, raw)| match extract_sql(&raw) {
            Ok(sql) => Candidate { sample_index: i, raw, sql, extraction_ok: true, report: None },
            Err(_) => {
                Candidate { sample_index: i, sql: raw.trim().to_string(), raw, extraction_ok: false, report: Some(extraction_failure_report()) }
            }
        })
        .collect())
}

/// Expected result for exec-and-match scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Gold {
    pub result: ResultTable,
    pub cmp: ComparePolicy,
}

impl Gold {
    /// Executes the gold SQL; a failing gold query yields None.
    pub fn from_sql(gw: &Gateway, sql: &str, dialect: Dialect, db_id: &str) -> Result<Option<Gold>, GatewayError> {
        let r = gw.run_default(sql, dialect, db_id)?;
        Ok(r.result.filter(|_| r.status == ExecStatus::Ok).map(|result| Gold { result, cmp: ComparePolicy::for_gold_sql(sql, dialect) }))
    }
}

fn judge(c: &Candidate, report: &ExecReport, policy: RewardPolicy, gold: Option<&Gold>) -> Result<Judged, RewardError> {
    let (g, cmp) = match gold {
        Some(g) => (Some(&g.result), g.cmp),
        None => (None, ComparePolicy::default()),
    };
    let r = if c.extraction_ok { reward(report, g, policy, &cmp)? } else { 0 };
    let failure = match r {
        1 => None,
        _ if !c.extraction_ok => Some(FailureKind::ExtractionFailure),
        _ => Some(report.error_class.map(FailureKind::from_error_class).unwrap_or(FailureKind::WrongResult)),
    };
    Ok(Judged {
        sample_index: c.sample_index,
        sql: c.sql.clone(),
        extraction_ok: c.extraction_ok,
        status: report.status,
        error_class: report.error_class,
        raw_error: report.raw_error.clone(),
        reward: r,
        failure,
    })
}

/// Executes any unexecuted candidates and splits them by reward. Every
/// candidate lands in exactly one side; duplicates stay separate.
pub fn partition(
    gw: &Gateway,
    dialect: Dialect,
    db_id: &str,
    candidates: &mut [Candidate],
    policy: RewardPolicy,
    gold: Option<&Gold>,
    workers: usize,
) -> Result<(Vec<Judged>, Vec<Judged>), SamplingError> {
    let pending: Vec<usize> = candidates.iter().enumerate().filter(|(_, c)| c.report.is_none()).map(|(i, _)| i).collect();
    if !pending.is_empty() {
        let batch: Vec<(String, String)> = pending.iter().map(|&i| (candidates[i].sql.clone(), db_id.to_string())).collect();
        for (i, r) in pending.into_iter().zip(gw.run_batch(&batch, dialect, workers)?) {
            candidates[i].report = Some(r);
        }
    }
    let (mut valid, mut neg) = (Vec::new(), Vec::new());
    for c in candidates.iter() {
        let j = judge(c, c.report.as_ref().expect("executed above"), policy, gold)?;
        if j.reward == 1 {
            valid.push(j);
        } else {
            neg.push(j);
        }
    }
    Ok((valid, neg))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("nothing to select from")]
pub struct EmptySelection;

/// First-drawn valid sample.
pub fn best_of_n_select(valid: &[Judged]) -> Result<&Judged, EmptySelection> {
    valid.iter().min_by_key(|j| j.sample_index).ok_or(EmptySelection)
}

fn severity(j: &Judged) -> u8 {
    j.failure.unwrap_or(FailureKind::WrongResult).severity()
}

/// Most severe failure among the first `n_cap` negatives; ties go to the
/// earliest draw.
pub fn worst_of_n_select(neg: &[Judged], n_cap: usize) -> Result<&Judged, EmptySelection> {
    neg.iter().take(n_cap).max_by(|a, b| severity(a).cmp(&severity(b)).then(b.sample_index.cmp(&a.sample_index))).ok_or(EmptySelection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairConfig {
    pub worst_of: usize,
    /// Every valid x negative combination instead of one pair.
    pub cross_product: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig { worst_of: 8, cross_product: false }
    }
}

fn pair_record(q: &NLQuestion, dialect: Dialect, k: usize, chosen: &Judged, rejected: &Judged) -> PreferenceRecord {
    PreferenceRecord {
        id: format!("{}:{}:p{}", q.id, dialect.tag(), k),
        question_id: q.id.clone(),
        question: q.text.clone(),
        db_id: q.db_id.clone(),
        dialect,
        chosen: chosen.sql.clone(),
        rejected: rejected.sql.clone(),
        chosen_report: chosen.summary(),
        rejected_report: rejected.summary(),
    }
}

/// Zero pairs when either side is empty.
pub fn build_preference_pairs(q: &NLQuestion, dialect: Dialect, valid: &[Judged], neg: &[Judged], cfg: &PairConfig) -> Vec<PreferenceRecord> {
    let (Ok(best), Ok(worst)) = (best_of_n_select(valid), worst_of_n_select(neg, cfg.worst_of)) else {
        return Vec::new();
    };
    if !cfg.cross_product {
        if best.sql == worst.sql {
            log::warn!("{}: chosen and rejected SQL coincide; no pair", q.id);
            return Vec::new();
        }
        return vec![pair_record(q, dialect, 0, best, worst)];
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for v in valid {
        for n in neg.iter().take(cfg.worst_of) {
            if v.sql != n.sql && seen.insert((v.sql.as_str(), n.sql.as_str())) {
                let k = out.len();
                out.push(pair_record(q, dialect, k, v, n));
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum RetentionError {
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("n must be at least 1")]
    ZeroN,
    #[error("question {question_id} has {have} samples, {need} requested")]
    InsufficientSamples { question_id: String, have: usize, need: usize },
}

/// Chance that at least one of `n` independent samples is valid.
pub fn retention_rate(p: f64, n: u32) -> Result<f64, RetentionError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RetentionError::BadProbability(p));
    }
    if n == 0 {
        return Err(RetentionError::ZeroN);
    }
    Ok(1.0 - (1.0 - p).powi(n as i32))
}

/// Per-question sample log written by the sampling stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSamples {
    pub question_id: String,
    pub question: String,
    pub db_id: String,
    pub dialect: Dialect,
    pub policy: RewardPolicy,
    #[serde(default = "seed_source")]
    pub source: QuestionSource,
    pub samples: Vec<Judged>,
}

fn seed_source() -> QuestionSource {
    QuestionSource::Seed
}

impl QuestionSamples {
    pub fn question(&self) -> NLQuestion {
        NLQuestion {
            id: self.question_id.clone(),
            text: self.question.clone(),
            db_id: self.db_id.clone(),
            source: self.source,
            value_grounded: false,
        }
    }

    /// D_Valid records (one per distinct SQL) and D_Neg records (all).
    pub fn records(&self) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
        let q = self.question();
        let mut seen = HashSet::new();
        let (mut valid, mut neg) = (Vec::new(), Vec::new());
        for j in &self.samples {
            if j.reward == 1 {
                if seen.insert(j.sql.as_str()) {
                    valid.push(sample_record(&q, self.dialect, j));
                }
            } else {
                neg.push(sample_record(&q, self.dialect, j));
            }
        }
        (valid, neg)
    }
}

/// Fraction of questions with a valid sample among their first n draws.
pub fn empirical_retention(log: &[QuestionSamples], ns: &[usize]) -> Result<Vec<(usize, f64)>, RetentionError> {
    let need = ns.iter().copied().max().unwrap_or(0);
    if ns.contains(&0) {
        return Err(RetentionError::ZeroN);
    }
    let mut first_valid = Vec::with_capacity(log.len());
    for q in log {
        if q.samples.len() < need {
            return Err(RetentionError::InsufficientSamples { question_id: q.question_id.clone(), have: q.samples.len(), need });
        }
        first_valid.push(q.samples.iter().filter(|s| s.reward == 1).map(|s| s.sample_index).min());
    }
    Ok(ns
        .iter()
        .map(|&n| {
            let hit = first_valid.iter().filter(|f| f.is_some_and(|i| i < n)).count();
            (n, if log.is_empty() { 0.0 } else { hit as f64 / log.len() as f64 })
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplingOutput {
    pub log: Vec<QuestionSamples>,
    /// One record per distinct valid SQL per question.
    pub valid: Vec<DatasetRecord>,
    pub neg: Vec<DatasetRecord>,
    pub failed_questions: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleItem {
    pub question: NLQuestion,
    pub gold_sql: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub n: usize,
    /// None picks exec-and-match when gold SQL exists, exec-only otherwise.
    pub policy: Option<RewardPolicy>,
    pub seed: u64,
}

fn sample_record(q: &NLQuestion, dialect: Dialect, j: &Judged) -> DatasetRecord {
    DatasetRecord {
        db_id: q.db_id.clone(),
        dialect,
        id: format!("{}:{}:s{}", q.id, dialect.tag(), j.sample_index),
        provenance: if q.source == QuestionSource::Augmented { Provenance::Augmented } else { Provenance::Sampled },
        question: q.text.clone(),
        question_id: q.id.clone(),
        round: 0,
        sql: j.sql.clone(),
        status: if j.reward == 1 { RecordStatus::Valid } else { RecordStatus::Invalid },
    }
}

pub fn sample_one(svc: &Services, item: &SampleItem, dialect: Dialect, cfg: &SampleConfig) -> Result<QuestionSamples, SamplingError> {
    let q = &item.question;
    let gold = match &item.gold_sql {
        Some(sql) => Gold::from_sql(svc.gateway, sql, dialect, &q.db_id)?,
        None => None,
    };
    if item.gold_sql.is_some() && gold.is_none() {
        log::warn!("{}: gold SQL fails on {}; scoring by execution only", q.id, dialect);
    }
    let policy = match (cfg.policy, &gold) {
        (Some(RewardPolicy::ExecAndMatch), None) => return Err(RewardError::MissingGold.into()),
        (Some(p), _) => p,
        (None, Some(_)) => RewardPolicy::ExecAndMatch,
        (None, None) => RewardPolicy::ExecOnly,
    };
    let seed = derive_seed(cfg.seed, &[&q.id, dialect.tag()]);
    let mut cands = sample_candidates(svc, q, cfg.n, dialect, seed)?;
    let (valid, neg) = partition(svc.gateway, dialect, &q.db_id, &mut cands, policy, gold.as_ref(), 1)?;
    let mut samples: Vec<Judged> = valid.into_iter().chain(neg).collect();
    samples.sort_by_key(|j| j.sample_index);
    Ok(QuestionSamples { question_id: q.id.clone(), question: q.text.clone(), db_id: q.db_id.clone(), dialect, policy, source: q.source, samples })
}

/// The sampling stage over many questions. A question whose model call
/// fails is reported, not fatal.
pub fn run_sampling(svc: &Services, items: &[SampleItem], dialect: Dialect, cfg: &SampleConfig) -> Result<SamplingOutput, SamplingError> {
    if cfg.n == 0 {
        return Err(SamplingError::ZeroSamples);
    }
    if svc.gateway.backend(dialect).is_none() {
        return Err(GatewayError::UnknownBackend(dialect).into());
    }
    let results = parallel_map(items, svc.workers, |_, it| sample_one(svc, it, dialect, cfg));
    let mut out = SamplingOutput::default();
    for (it, r) in items.iter().zip(results) {
        let qs = match r {
            Ok(qs) => qs,
            Err(e @ (SamplingError::Gateway(GatewayError::UnknownBackend(_)) | SamplingError::Reward(_))) => return Err(e),
            Err(e) => {
                log::warn!("{}: {}", it.question.id, e);
                out.failed_questions.push((it.question.id.clone(), e.to_string()));
                continue;
            }
        };
        let (valid, neg) = qs.records();
        out.valid.extend(valid);
        out.neg.extend(neg);
        out.log.push(qs);
    }
    Ok(out)
}

/// Builds pairs from a sampling log, one question at a time.
pub fn pairs_from_log(log: &[QuestionSamples], cfg: &PairConfig) -> (Vec<PreferenceRecord>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for qs in log {
        let q = qs.question();
        let (valid, neg): (Vec<Judged>, Vec<Judged>) = qs.samples.iter().cloned().partition(|j| j.reward == 1);
        let got = build_preference_pairs(&q, qs.dialect, &valid, &neg, cfg);
        if got.is_empty() {
            skipped += 1;
        }
        pairs.extend(got);
    }
    (pairs, skipped)
}

fn normalize_question(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = t[digits..].strip_prefix(['.', ')']) {
            return rest.trim();
        }
    }
    t
}

fn grounded(text: &str, db: &InMemoryDb) -> bool {
    let lower = text.to_lowercase();
    let tokens: HashSet<&str> = text.split(|c: char| !c.is_alphanumeric() && c != '.').collect();
    db.tables.iter().flat_map(|t| &t.rows).flatten().any(|v| match v {
        Value::Text(s) if s.chars().count() >= 3 => lower.contains(&s.to_lowercase()),
        Value::Int(i) if i.abs() >= 10 => tokens.contains(i.to_string().as_str()),
        _ => false,
    })
}

/// Asks the model for questions grounded in the database's values. Exact
/// duplicates (case and spacing ignored) are dropped.
pub fn augment_questions(svc: &Services, db: &InMemoryDb, k: usize, seed: u64) -> Result<Vec<NLQuestion>, SamplingError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if db.is_empty() {
        return Err(SamplingError::EmptyDatabase(db.db_id.clone()));
    }
    let prompt = render_question_gen_prompt(svc.templates, db, k, 5)?;
    let raw = generate(svc.model, &GenRequest::with_decoding(prompt, 1, &svc.decoding).with_seed(seed), &svc.retry)?.remove(0);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let text = strip_list_marker(line);
        if text.is_empty() || !seen.insert(normalize_question(text)) {
            continue;
        }
        out.push(NLQuestion {
            id: format!("aug:{}:{}", db.db_id, &crate::llm::prompt_digest(&normalize_question(text))[..12]),
            text: text.to_string(),
            db_id: db.db_id.clone(),
            source: QuestionSource::Augmented,
            value_grounded: grounded(text, db),
        });
    }
    Ok(out)
}

/// Strict: a tie is not a preference.
pub fn dpo_preference_check(scorer: &dyn GenerationModel, pair: &PreferenceRecord) -> Result<bool, LlmError> {
    Ok(scorer.score(&pair.question, &pair.chosen)? > scorer.score(&pair.question, &pair.rejected)?)
}

/// Share of pairs the scorer orders correctly; None for an empty set.
pub fn pairwise_accuracy(scorer: &dyn GenerationModel, pairs: &[PreferenceRecord]) -> Result<Option<f64>, LlmError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut hit = 0;
    for p in pairs {
        hit += dpo_preference_check(scorer, p)? as usize;
    }
    Ok(Some(hit as f64 / pairs.len() as f64))
}
