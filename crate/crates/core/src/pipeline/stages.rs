use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::store::{append_lines, read_checkpoint, repair_tail, write_atomic, Event};
use super::{OutputLine, PipelineError, Runtime};
use crate::eval::{dataset_stats, estimate_llm_calls, evaluate, perturbation_breakdown, render_stats_table, Benchmark, EvalReport};
use crate::llm::{generate, render_text2sql_prompt, GenRequest};
use crate::model::{serialize_preference, serialize_record, DatasetRecord, Dialect, NLQuestion, QuestionSource, Stage};
use crate::sampling::{
    augment_questions, empirical_retention, pairs_from_log, sample_one, PairConfig, QuestionSamples, SampleConfig, SampleItem, SamplingError,
};
use crate::services::{derive_seed, parallel_map};
use crate::translate::{
    translate_with_feedback, BootstrapOutput, CommandPrefilter, IdentityPrefilter, IterationStats, JobSummary, Prefilter, TranslateConfig,
};

pub(super) const EVENTS: &str = "events.jsonl";
const PROGRESS: &str = "progress.jsonl";

pub(super) fn dir_name(s: Stage) -> &'static str {
    match s {
        Stage::Translate => "translate",
        Stage::Sample => "sample",
        Stage::BuildPrefs => "prefs",
        Stage::Evaluate => "eval",
        Stage::Report => "report",
    }
}

pub(super) fn wipe(out: &Path, s: Stage) -> std::io::Result<()> {
    match std::fs::remove_dir_all(out.join(dir_name(s))) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

pub(super) fn run_stage(rt: &Runtime, stage: Stage) -> Result<BTreeMap<String, u64>, PipelineError> {
    let out = rt.cfg.output_dir.clone();
    let dir = out.join(dir_name(stage));
    let cx = Cx { rt, stage, dir, events: out.join(EVENTS) };
    std::fs::create_dir_all(&cx.dir).map_err(|e| cx.fail(e))?;
    repair_tail(&cx.events).map_err(|e| cx.fail(e))?;
    match stage {
        Stage::Translate => translate(&cx),
        Stage::Sample => sample(&cx),
        Stage::BuildPrefs => build_prefs(&cx),
        Stage::Evaluate => eval(&cx),
        Stage::Report => report(&cx, &out),
    }
}

struct Cx<'a> {
    rt: &'a Runtime,
    stage: Stage,
    dir: PathBuf,
    events: PathBuf,
}

impl Cx<'_> {
    fn fail(&self, e: impl std::fmt::Display) -> PipelineError {
        PipelineError::stage(self.stage, e)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.path(name), text.as_bytes()).map_err(|e| self.fail(e))
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<(), PipelineError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| self.fail(e))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn write_lines<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), PipelineError> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it).map_err(|e| self.fail(e))?);
            s.push('\n');
        }
        self.write(name, &s)
    }

    fn write_records(&self, name: &str, recs: &[&DatasetRecord]) -> Result<(), PipelineError> {
        crate::model::check_unique_ids(recs.iter().map(|r| r.id.as_str())).map_err(|e| self.fail(e))?;
        let s: String = recs.iter().map(|r| serialize_record(r) + "\n").collect();
        self.write(name, &s)
    }

    /// Events go first so a crash before the checkpoint at worst repeats
    /// them rather than losing them.
    fn commit<T: Serialize>(&self, events: &[Event], done: &[T]) -> Result<(), PipelineError> {
        append_lines(&self.events, events).map_err(|e| self.fail(e))?;
        append_lines(&self.path(PROGRESS), done).map_err(|e| self.fail(e))
    }

    fn checkpoint<T: serde::de::DeserializeOwned>(&self) -> Result<Vec<T>, PipelineError> {
        read_checkpoint(&self.path(PROGRESS)).map_err(|e| self.fail(e))
    }

    fn chunk(&self) -> usize {
        self.rt.cfg.workers.max(1)
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "unknown".into(),
    }
}

fn translate(cx: &Cx) -> Result<BTreeMap<String, u64>, PipelineError> {
    let rt = cx.rt;
    let tc = rt.cfg.translate.as_ref().expect("configured");
    let pairs = &rt.inputs.pairs;
    let prefilter: Option<Box<dyn Prefilter>> = match tc.prefilter.as_str() {
        "none" => None,
        "identity" => Some(Box::new(IdentityPrefilter)),
        s => {
            let cmd = s.strip_prefix("command:").unwrap_or(s);
            Some(Box::new(CommandPrefilter::new(cmd).ok_or_else(|| cx.fail("empty prefilter command"))?))
        }
    };
    let tcfg = TranslateConfig { max_rounds: tc.max_rounds, reward_policy: tc.reward_policy, seed: rt.cfg.seed };
    let svc = rt.services();

    let jobs: Vec<(usize, Dialect)> = (0..pairs.len()).flat_map(|i| tc.targets.iter().map(move |t| (i, *t))).collect();
    let job_id = |(i, t): &(usize, Dialect)| format!("{}:{}", pairs[*i].id, t.tag());
    let order: HashMap<String, usize> = jobs.iter().enumerate().map(|(k, j)| (job_id(j), k)).collect();

    let mut done: Vec<JobSummary> = cx.checkpoint()?;
    done.retain(|j| order.contains_key(&j.record.id));
    let have: HashSet<String> = done.iter().map(|j| j.record.id.clone()).collect();
    let pending: Vec<(usize, Dialect)> = jobs.iter().filter(|j| !have.contains(&job_id(j))).copied().collect();
    if !have.is_empty() {
        log::info!("translate: resuming, {} of {} jobs already done", have.len(), jobs.len());
    }

    for chunk in pending.chunks(cx.chunk()) {
        let outcomes = parallel_map(chunk, svc.workers, |_, (i, t)| translate_with_feedback(&svc, &pairs[*i], *t, &tcfg, prefilter.as_deref()));
        let summaries: Vec<JobSummary> = chunk.iter().zip(&outcomes).map(|((i, _), o)| JobSummary::new(&pairs[*i], o)).collect();
        let events: Vec<Event> = summaries
            .iter()
            .map(|j| {
                let outcome = if j.solved_by_prefilter {
                    "prefilter"
                } else if j.success {
                    "valid"
                } else if j.aborted.is_some() {
                    "aborted"
                } else {
                    "unresolved"
                };
                let detail = j.aborted.clone().or_else(|| j.unresolved.as_ref().and_then(|u| u.attempts.last()).and_then(|a| a.raw_error.clone()));
                let e = Event::new("translate", &j.record.id, outcome).round(j.rounds_used);
                match detail {
                    Some(d) => e.detail(d),
                    None => e,
                }
            })
            .collect();
        cx.commit(&events, &summaries)?;
        done.extend(summaries);
    }

    done.sort_by_key(|j| order[&j.record.id]);
    let aborted = done.iter().filter(|j| j.aborted.is_some()).count();
    if !done.is_empty() && aborted == done.len() {
        return Err(cx.fail(format!("every job was abandoned, first because: {}", done[0].aborted.as_deref().unwrap_or(""))));
    }
    let out = BootstrapOutput::from_summaries(&tc.targets, done);
    cx.write_records("translations.jsonl", &out.records.iter().collect::<Vec<_>>())?;
    cx.write_records("d_trans.jsonl", &out.d_trans().collect::<Vec<_>>())?;
    cx.write_lines("unresolved.jsonl", &out.unresolved)?;
    #[derive(Serialize)]
    struct Stats<'a> {
        source_pairs: usize,
        max_rounds: usize,
        dialects: &'a BTreeMap<Dialect, IterationStats>,
    }
    cx.write_json("stats.json", &Stats { source_pairs: pairs.len(), max_rounds: tc.max_rounds, dialects: &out.stats })?;
    Ok(BTreeMap::from([
        ("jobs".into(), out.records.len() as u64),
        ("valid".into(), out.d_trans().count() as u64),
        ("unresolved".into(), out.unresolved.len() as u64),
        ("aborted".into(), aborted as u64),
    ]))
}

#[derive(Serialize, serde::Deserialize)]
struct Augmented {
    db_id: String,
    questions: Vec<NLQuestion>,
}

fn sample_items(cx: &Cx) -> Result<Vec<SampleItem>, PipelineError> {
    let rt = cx.rt;
    let sc = rt.cfg.sample.as_ref().expect("configured");
    let mut items = Vec::new();
    if sc.from_translate && rt.cfg.translate.is_some() {
        let path = rt.cfg.output_dir.join(dir_name(Stage::Translate)).join("d_trans.jsonl");
        let recs: Vec<DatasetRecord> =
            crate::model::read_jsonl(&path).map_err(|e| cx.fail(format!("{}: {} (run the translate stage first)", path.display(), e)))?;
        for r in recs.into_iter().filter(|r| r.dialect == sc.dialect) {
            let q = NLQuestion { id: r.question_id, text: r.question, db_id: r.db_id, source: QuestionSource::Seed, value_grounded: false };
            items.push(SampleItem { question: q, gold_sql: Some(r.sql) });
        }
    }
    for l in &rt.inputs.questions {
        let q = NLQuestion {
            id: l.id.clone(),
            text: l.question.clone(),
            db_id: l.db_id.clone(),
            source: QuestionSource::ExistingDataset,
            value_grounded: false,
        };
        items.push(SampleItem { question: q, gold_sql: l.gold_sql.clone() });
    }

    let aug_path = cx.path("augmented.jsonl");
    let mut aug: Vec<Augmented> = read_checkpoint(&aug_path).map_err(|e| cx.fail(e))?;
    let svc = rt.services();
    for db_id in &sc.augment_dbs {
        if aug.iter().any(|a| &a.db_id == db_id) {
            continue;
        }
        let db = svc.database(db_id).ok_or_else(|| cx.fail(format!("augment: unknown database {}", db_id)))?;
        let qs = augment_questions(&svc, &db, sc.augment_k, derive_seed(rt.cfg.seed, &["augment", db_id]))
            .map_err(|e| cx.fail(format!("augment {}: {}", db_id, e)))?;
        let ev: Vec<Event> = qs.iter().map(|q| Event::new("augment", &q.id, if q.value_grounded { "grounded" } else { "ungrounded" })).collect();
        let a = Augmented { db_id: db_id.clone(), questions: qs };
        append_lines(&cx.events, &ev).map_err(|e| cx.fail(e))?;
        append_lines(&aug_path, std::slice::from_ref(&a)).map_err(|e| cx.fail(e))?;
        aug.push(a);
    }
    for db_id in &sc.augment_dbs {
        for q in aug.iter().filter(|a| &a.db_id == db_id).flat_map(|a| &a.questions) {
            items.push(SampleItem { question: q.clone(), gold_sql: None });
        }
    }

    let mut seen = HashSet::new();
    items.retain(|it| {
        let fresh = seen.insert(it.question.id.clone());
        if !fresh {
            log::warn!("sample: duplicate question id {}, keeping the first", it.question.id);
        }
        fresh
    });
    Ok(items)
}

fn sample(cx: &Cx) -> Result<BTreeMap<String, u64>, PipelineError> {
    let rt = cx.rt;
    let sc = rt.cfg.sample.as_ref().expect("configured");
    let items = sample_items(cx)?;
    let scfg = SampleConfig { n: sc.n, policy: sc.policy().map_err(|e| cx.fail(e))?, seed: rt.cfg.seed };
    let svc = rt.services();
    let order: HashMap<&str, usize> = items.iter().enumerate().map(|(k, it)| (it.question.id.as_str(), k)).collect();

    let mut done: Vec<QuestionSamples> = cx.checkpoint()?;
    done.retain(|q| order.contains_key(q.question_id.as_str()));
    let have: HashSet<String> = done.iter().map(|q| q.question_id.clone()).collect();
    let pending: Vec<&SampleItem> = items.iter().filter(|it| !have.contains(&it.question.id)).collect();
    let mut failed = 0u64;

    for chunk in pending.chunks(cx.chunk()) {
        let results = parallel_map(chunk, svc.workers, |_, it| sample_one(&svc, it, sc.dialect, &scfg));
        let mut events = Vec::new();
        let mut ok = Vec::new();
        for (it, r) in chunk.iter().zip(results) {
            match r {
                Ok(qs) => {
                    for j in &qs.samples {
                        let outcome =
                            if j.reward == 1 { "valid".to_string() } else { j.failure.as_ref().map(tag).unwrap_or_else(|| "invalid".into()) };
                        events.push(Event::new("sample", format!("{}:s{}", qs.question_id, j.sample_index), outcome));
                    }
                    ok.push(qs);
                }
                Err(e @ SamplingError::Reward(_)) => return Err(cx.fail(format!("{}: {}", it.question.id, e))),
                Err(e) => {
                    log::warn!("sample {}: {}", it.question.id, e);
                    failed += 1;
                    events.push(Event::new("sample", &it.question.id, "failed").detail(e.to_string()));
                }
            }
        }
        cx.commit(&events, &ok)?;
        done.extend(ok);
    }
    if !items.is_empty() && done.is_empty() {
        return Err(cx.fail("no question could be sampled"));
    }

    done.sort_by_key(|q| order[q.question_id.as_str()]);
    let (mut valid, mut neg) = (Vec::new(), Vec::new());
    for q in &done {
        let (v, n) = q.records();
        valid.extend(v);
        neg.extend(n);
    }
    cx.write_lines("samples.jsonl", &done)?;
    cx.write_records("valid.jsonl", &valid.iter().collect::<Vec<_>>())?;
    cx.write_records("neg.jsonl", &neg.iter().collect::<Vec<_>>())?;
    cx.write("retention.csv", &retention_csv(&done, &sc.retention_ns, sc.n))?;
    Ok(BTreeMap::from([
        ("questions".into(), done.len() as u64),
        ("valid".into(), valid.len() as u64),
        ("neg".into(), neg.len() as u64),
        ("failed".into(), failed),
    ]))
}

fn retention_csv(log: &[QuestionSamples], ns: &[usize], n: usize) -> String {
    let usable: Vec<usize> = ns.iter().copied().filter(|&k| k <= n).collect();
    let mut s = String::from("n,rate\n");
    if let Ok(rows) = empirical_retention(log, &usable) {
        for (k, r) in rows {
            s.push_str(&format!("{},{:.4}\n", k, r));
        }
    }
    s
}

fn read_stage_file<T: serde::de::DeserializeOwned>(cx: &Cx, stage: Stage, name: &str) -> Result<Vec<T>, PipelineError> {
    let path = cx.rt.cfg.output_dir.join(dir_name(stage)).join(name);
    crate::model::read_jsonl(&path).map_err(|e| cx.fail(format!("{}: {} (run the {} stage first)", path.display(), e, stage.as_str())))
}

fn build_prefs(cx: &Cx) -> Result<BTreeMap<String, u64>, PipelineError> {
    let pc = cx.rt.cfg.build_prefs.clone().unwrap_or_default();
    let log: Vec<QuestionSamples> = read_stage_file(cx, Stage::Sample, "samples.jsonl")?;
    let (pairs, skipped) = pairs_from_log(&log, &PairConfig { worst_of: pc.worst_of, cross_product: pc.cross_product });
    let mut per_q: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pairs {
        *per_q.entry(p.question_id.as_str()).or_default() += 1;
    }
    let events: Vec<Event> = log
        .iter()
        .map(|q| match per_q.get(q.question_id.as_str()) {
            Some(n) => Event::new("build-prefs", &q.question_id, "paired").detail(n.to_string()),
            None => Event::new("build-prefs", &q.question_id, "skipped"),
        })
        .collect();
    append_lines(&cx.events, &events).map_err(|e| cx.fail(e))?;
    crate::model::check_unique_ids(pairs.iter().map(|p| p.id.as_str())).map_err(|e| cx.fail(e))?;
    let mut s = String::new();
    for p in &pairs {
        s.push_str(&serialize_preference(p).map_err(|e| cx.fail(e))?);
        s.push('\n');
    }
    cx.write("preferences.jsonl", &s)?;
    let counters = BTreeMap::from([
        ("pairs".to_string(), pairs.len() as u64),
        ("questions".to_string(), log.len() as u64),
        ("skipped".to_string(), skipped as u64),
    ]);
    cx.write_json("stats.json", &counters)?;
    Ok(counters)
}

fn generate_outputs(cx: &Cx, bench: &Benchmark) -> Result<Vec<OutputLine>, PipelineError> {
    let rt = cx.rt;
    let svc = rt.services();
    let order: HashMap<&str, usize> = bench.items.iter().enumerate().map(|(k, it)| (it.id.as_str(), k)).collect();
    let mut done: Vec<OutputLine> = cx.checkpoint()?;
    done.retain(|o| order.contains_key(o.id.as_str()));
    let have: HashSet<String> = done.iter().map(|o| o.id.clone()).collect();
    let pending: Vec<_> = bench.items.iter().filter(|it| !have.contains(&it.id)).collect();
    for chunk in pending.chunks(cx.chunk()) {
        let results = parallel_map(chunk, svc.workers, |_, it| {
            let prompt =
                render_text2sql_prompt(&rt.templates, &it.question, &svc.schema(&it.db_id), &it.db_id, it.dialect).map_err(|e| e.to_string())?;
            let req = GenRequest::with_decoding(prompt, 1, &svc.decoding).with_seed(derive_seed(rt.cfg.seed, &["eval", &it.id]));
            generate(svc.model, &req, &svc.retry).map(|mut v| v.remove(0)).map_err(|e| e.to_string())
        });
        let mut ok = Vec::new();
        let mut events = Vec::new();
        for (it, r) in chunk.iter().zip(results) {
            match r {
                Ok(output) => ok.push(OutputLine { id: it.id.clone(), output }),
                Err(e) => events.push(Event::new("evaluate", &it.id, "model_error").detail(e)),
            }
        }
        cx.commit(&events, &ok)?;
        done.extend(ok);
    }
    done.sort_by_key(|o| order[o.id.as_str()]);
    Ok(done)
}

fn eval(cx: &Cx) -> Result<BTreeMap<String, u64>, PipelineError> {
    let rt = cx.rt;
    let bench = Benchmark::prepare(&rt.gateway, rt.inputs.benchmark.clone(), rt.cfg.workers.max(1)).map_err(|e| cx.fail(e))?;
    let outputs = match &rt.inputs.outputs {
        Some(given) => {
            let keep: HashSet<&str> = bench.items.iter().map(|i| i.id.as_str()).collect();
            given.iter().filter(|o| keep.contains(o.id.as_str())).cloned().collect()
        }
        None => generate_outputs(cx, &bench)?,
    };
    cx.write_lines("outputs.jsonl", &outputs)?;
    let pairs: Vec<(String, String)> = outputs.into_iter().map(|o| (o.id, o.output)).collect();
    let report = evaluate(&rt.gateway, &bench, &pairs, rt.cfg.workers.max(1)).map_err(|e| cx.fail(e))?;
    let events: Vec<Event> = report
        .items
        .iter()
        .map(|r| Event::new("evaluate", &r.id, if r.correct { "correct".to_string() } else { r.failure.as_ref().map(tag).unwrap_or_default() }))
        .collect();
    append_lines(&cx.events, &events).map_err(|e| cx.fail(e))?;
    let cats = perturbation_breakdown(&report);
    let mut txt = report.render_table();
    txt.push('\n');
    txt.push_str(&format!("{:<28} {:>7} {:>7} {:>9}\n", "category", "total", "correct", "accuracy"));
    let mut csv = String::from("category,total,correct,accuracy\n");
    for c in &cats {
        txt.push_str(&format!("{:<28} {:>7} {:>7} {:>8.2}%\n", c.category, c.total, c.correct, c.accuracy));
        csv.push_str(&format!("{},{},{},{:.2}\n", c.category, c.total, c.correct, c.accuracy));
    }
    cx.write_json("report.json", &report)?;
    cx.write("report.txt", &txt)?;
    cx.write("categories.csv", &csv)?;
    let all = report.overall();
    Ok(BTreeMap::from([
        ("items".into(), all.total as u64),
        ("correct".into(), all.correct as u64),
        ("gold_invalid".into(), report.gold_invalid as u64),
        ("missing_outputs".into(), report.missing_outputs as u64),
    ]))
}

fn report(cx: &Cx, out: &Path) -> Result<BTreeMap<String, u64>, PipelineError> {
    let rt = cx.rt;
    let mut written = 0u64;

    if let Some(sc) = &rt.cfg.sample {
        let p = out.join(dir_name(Stage::Sample)).join("samples.jsonl");
        if p.exists() {
            let log: Vec<QuestionSamples> = crate::model::read_jsonl(&p).map_err(|e| cx.fail(e))?;
            cx.write("retention.csv", &retention_csv(&log, &sc.retention_ns, sc.n))?;
            written += 1;
        }
    }

    let ev = out.join(dir_name(Stage::Evaluate)).join("report.json");
    if ev.exists() {
        let text = std::fs::read_to_string(&ev).map_err(|e| cx.fail(e))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| cx.fail(e))?;
        let mut csv = String::from("dialect,total,correct,accuracy\n");
        for (d, c) in &r.per_dialect {
            csv.push_str(&format!("{},{},{},{:.2}\n", d.tag(), c.total, c.correct, c.accuracy()));
        }
        csv.push_str(&format!("macro,,,{:.2}\n", r.macro_average));
        cx.write("accuracy.csv", &csv)?;
        written += 1;
    }

    let st = out.join(dir_name(Stage::Translate)).join("stats.json");
    if let (Some(tc), true) = (&rt.cfg.translate, st.exists()) {
        #[derive(serde::Deserialize)]
        struct Stats {
            dialects: BTreeMap<Dialect, IterationStats>,
        }
        let text = std::fs::read_to_string(&st).map_err(|e| cx.fail(e))?;
        let stats: Stats = serde_json::from_str(&text).map_err(|e| cx.fail(e))?;
        let mut rounds = String::from("dialect,round,proposed,failed\n");
        let mut cost = String::from("dialect,items,p_prefilter,p_llm,rounds,estimated_calls,actual_calls\n");
        for (d, s) in &stats.dialects {
            for (k, (p, f)) in s.proposed.iter().zip(&s.failed).enumerate() {
                rounds.push_str(&format!("{},{},{},{}\n", d.tag(), k + 1, p, f));
            }
            let p_pre = if s.items == 0 { 0.0 } else { s.prefilter_solved as f64 / s.items as f64 };
            let p_llm = match (s.proposed.first(), s.failed.first()) {
                (Some(&p), Some(&f)) if p > 0 => 1.0 - f as f64 / p as f64,
                _ => 0.0,
            };
            let est = estimate_llm_calls(s.items as u64, p_llm, tc.max_rounds as u32, p_pre).map_err(|e| cx.fail(e))?;
            let actual: usize = s.proposed.iter().sum();
            cost.push_str(&format!("{},{},{:.4},{:.4},{},{},{}\n", d.tag(), s.items, p_pre, p_llm, tc.max_rounds, est, actual));
        }
        cx.write("translate_rounds.csv", &rounds)?;
        cx.write("cost.csv", &cost)?;
        written += 2;
    }

    let candidates = [
        out.join(dir_name(Stage::Translate)).join("d_trans.jsonl"),
        out.join(dir_name(Stage::Sample)).join("valid.jsonl"),
        out.join(dir_name(Stage::BuildPrefs)).join("preferences.jsonl"),
    ];
    let present: Vec<&Path> = candidates.iter().filter(|p| p.exists()).map(PathBuf::as_path).collect();
    if !present.is_empty() {
        let stats = dataset_stats(&present).map_err(|e| cx.fail(e))?;
        cx.write("dataset_stats.txt", &render_stats_table(&stats))?;
        written += 1;
    }
    Ok(BTreeMap::from([("files".into(), written)]))
}
