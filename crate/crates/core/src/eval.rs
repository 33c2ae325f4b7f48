//! Benchmark evaluation and the closed-form analytics around it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ResultTable;
use crate::executor::{compare_results, ComparePolicy, Gateway, GatewayError};
use crate::llm::extract_sql;
use crate::model::{parse_preference, parse_record, Dialect, FailureKind, FormatError};
use crate::services::parallel_map;

/// Rounds half away from zero at `decimals` places. Values are first snapped
/// to a 1e-6 grid at that scale, so 19.305 stored as 19.30499.. still rounds up.
pub fn round_half_away(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let y = x * scale;
    let snapped = (y * 1e6).round() / 1e6;
    snapped.round() / scale
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("empty input")]
    Empty,
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
}

/// Mean of the dialect scores minus the SQLite score, to 2 decimals.
pub fn flip_delta(dialect_scores: &[f64], sqlite_score: f64) -> Result<f64, AnalyticsError> {
    if dialect_scores.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let mean = dialect_scores.iter().sum::<f64>() / dialect_scores.len() as f64;
    Ok(round_half_away(mean - sqlite_score, 2))
}

/// Equal-weight mean, to 2 decimals.
pub fn macro_average(scores: &[f64]) -> Result<f64, AnalyticsError> {
    if scores.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    Ok(round_half_away(scores.iter().sum::<f64>() / scores.len() as f64, 2))
}

/// Expected model calls when a prefilter solves `p_prefilter` of `q` queries
/// and each model round solves `p_llm` of what is left.
pub fn estimate_llm_calls(q: u64, p_llm: f64, rounds: u32, p_prefilter: f64) -> Result<u64, AnalyticsError> {
    for (name, v) in [("p_llm", p_llm), ("p_prefilter", p_prefilter)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(AnalyticsError::OutOfRange { name, value: v });
        }
    }
    if rounds == 0 {
        return Err(AnalyticsError::OutOfRange { name: "rounds", value: 0.0 });
    }
    let per_item: f64 = (0..rounds).map(|r| (1.0 - p_llm).powi(r as i32)).sum();
    Ok(round_half_away(q as f64 * (1.0 - p_prefilter) * per_item, 0) as u64)
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Mean over `a` of the best TF-IDF cosine against `b`. IDF is smoothed,
/// ln((1+N)/(1+df))+1, over the union of both corpora; vectors are L2-normalised.
pub fn diversity_score(a: &[String], b: &[String]) -> Result<f64, AnalyticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let docs: Vec<Vec<String>> = a.iter().chain(b).map(|d| tokens(d)).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in &docs {
        for t in d.iter().map(String::as_str).collect::<HashSet<_>>() {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let vecs: Vec<HashMap<&str, f64>> = docs
        .iter()
        .map(|d| {
            let mut v: HashMap<&str, f64> = HashMap::new();
            for t in d {
                *v.entry(t.as_str()).or_default() += 1.0;
            }
            for (t, w) in v.iter_mut() {
                *w *= ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0;
            }
            let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.values_mut().for_each(|w| *w /= norm);
            }
            v
        })
        .collect();
    let (va, vb) = vecs.split_at(a.len());
    let cos = |x: &HashMap<&str, f64>, y: &HashMap<&str, f64>| x.iter().map(|(t, w)| w * y.get(t).unwrap_or(&0.0)).sum::<f64>();
    let total: f64 = va.iter().map(|x| vb.iter().map(|y| cos(x, y)).fold(0.0, f64::max)).sum();
    Ok((total / a.len() as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub db_id: String,
    pub dialect: Dialect,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub gold_result: Option<ResultTable>,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("benchmark item {0} has neither gold SQL nor a gold result")]
    NoGold(String),
    #[error("output refers to unknown benchmark item {0}")]
    UnknownItem(String),
    #[error("duplicate output for item {0}")]
    DuplicateOutput(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Benchmark items with gold results materialised once.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub items: Vec<BenchmarkItem>,
    gold: Vec<Option<(ResultTable, ComparePolicy)>>,
}

impl Benchmark {
    pub fn load(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
        let items: Vec<BenchmarkItem> = crate::model::read_jsonl(path)?;
        crate::model::check_unique_ids(items.iter().map(|i| i.id.as_str()))?;
        for it in &items {
            if it.gold_sql.is_none() && it.gold_result.is_none() {
                return Err(EvalError::NoGold(it.id.clone()));
            }
        }
        Ok(items)
    }

    /// Executes gold SQL where no gold result is given. Items whose gold SQL
    /// fails stay in the list but are excluded from scoring.
    pub fn prepare(gw: &Gateway, items: Vec<BenchmarkItem>, workers: usize) -> Result<Self, EvalError> {
        let gold = parallel_map(&items, workers, |_, it| -> Result<_, GatewayError> {
            let cmp = match &it.gold_sql {
                Some(sql) => ComparePolicy::for_gold_sql(sql, it.dialect),
                None => ComparePolicy::default(),
            };
            if let Some(r) = &it.gold_result {
                return Ok(Some((r.clone(), cmp)));
            }
            let sql = it.gold_sql.as_deref().expect("validated at load");
            let rep = gw.run_default(sql, it.dialect, &it.db_id)?;
            match rep.result {
                Some(r) if rep.is_ok() => Ok(Some((r, cmp))),
                _ => {
                    log::warn!("gold SQL for {} fails: {}", it.id, rep.raw_error.unwrap_or_default());
                    Ok(None)
                }
            }
        });
        let gold = gold.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(Benchmark { items, gold })
    }

    pub fn gold_invalid(&self) -> usize {
        self.gold.iter().filter(|g| g.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub dialect: Dialect,
    pub category: Option<String>,
    pub correct: bool,
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
}

impl Counts {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemResult>,
    pub per_dialect: BTreeMap<Dialect, Counts>,
    pub gold_invalid: usize,
    pub missing_outputs: usize,
    /// Equal-weight mean of the per-dialect accuracies.
    pub macro_average: f64,
}

impl EvalReport {
    pub fn overall(&self) -> Counts {
        self.per_dialect.values().fold(Counts::default(), |a, c| Counts { total: a.total + c.total, correct: a.correct + c.correct })
    }

    /// Aligned text table.
    pub fn render_table(&self) -> String {
        let mut s = format!("{:<12} {:>7} {:>7} {:>9}\n", "dialect", "total", "correct", "accuracy");
        for (d, c) in &self.per_dialect {
            s.push_str(&format!("{:<12} {:>7} {:>7} {:>8.2}%\n", d.tag(), c.total, c.correct, c.accuracy()));
        }
        s.push_str(&format!("{:<12} {:>7} {:>7} {:>8.2}%\n", "macro", "", "", self.macro_average));
        if self.gold_invalid > 0 {
            s.push_str(&format!("excluded {} items whose gold SQL fails\n", self.gold_invalid));
        }
        s
    }
}

/// Scores raw model outputs against the benchmark. Items with no output
/// count as incorrect.
pub fn evaluate(gw: &Gateway, bench: &Benchmark, outputs: &[(String, String)], workers: usize) -> Result<EvalReport, EvalError> {
    let index: HashMap<&str, usize> = bench.items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut by_item: Vec<Option<&str>> = vec![None; bench.items.len()];
    for (id, raw) in outputs {
        let i = *index.get(id.as_str()).ok_or_else(|| EvalError::UnknownItem(id.clone()))?;
        if by_item[i].replace(raw.as_str()).is_some() {
            return Err(EvalError::DuplicateOutput(id.clone()));
        }
    }
    let scored: Vec<usize> = (0..bench.items.len()).filter(|&i| bench.gold[i].is_some()).collect();
    let results = parallel_map(&scored, workers, |_, &i| -> Result<ItemResult, GatewayError> {
        let it = &bench.items[i];
        let (gold, cmp) = bench.gold[i].as_ref().unwrap();
        let failure = match by_item[i].map(extract_sql) {
            None | Some(Err(_)) => Some(FailureKind::ExtractionFailure),
            Some(Ok(sql)) => {
                let rep = gw.run_default(&sql, it.dialect, &it.db_id)?;
                match (&rep.result, rep.error_class) {
                    (Some(r), _) if rep.is_ok() => (!compare_results(r, gold, cmp)).then_some(FailureKind::WrongResult),
                    (_, c) => Some(c.map(FailureKind::from_error_class).unwrap_or(FailureKind::Runtime)),
                }
            }
        };
        Ok(ItemResult { id: it.id.clone(), dialect: it.dialect, category: it.category.clone(), correct: failure.is_none(), failure })
    });
    let items = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut per_dialect: BTreeMap<Dialect, Counts> = BTreeMap::new();
    for r in &items {
        let c = per_dialect.entry(r.dialect).or_default();
        c.total += 1;
        c.correct += r.correct as usize;
    }
    let accs: Vec<f64> = per_dialect.values().map(|c| c.accuracy()).collect();
    Ok(EvalReport {
        missing_outputs: scored.iter().filter(|&&i| by_item[i].is_none()).count(),
        gold_invalid: bench.gold_invalid(),
        macro_average: macro_average(&accs).unwrap_or(0.0),
        per_dialect,
        items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub fn perturbation_breakdown(report: &EvalReport) -> Vec<CategoryRow> {
    let mut m: BTreeMap<String, Counts> = BTreeMap::new();
    for r in &report.items {
        let c = m.entry(r.category.clone().unwrap_or_else(|| "uncategorized".into())).or_default();
        c.total += 1;
        c.correct += r.correct as usize;
    }
    m.into_iter().map(|(category, c)| CategoryRow { category, total: c.total, correct: c.correct, accuracy: c.accuracy() }).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileStats {
    pub path: String,
    /// "sft" for dataset records, "dpo" for preference pairs.
    pub stage: String,
    pub by_source: BTreeMap<String, usize>,
    pub records: usize,
    pub errors: Vec<(usize, String)>,
}

/// Counts records per file by provenance; preference files count as pairs.
/// Unparseable lines are reported and skipped.
pub fn dataset_stats(paths: &[&Path]) -> Result<Vec<FileStats>, FormatError> {
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p)?;
        let mut fs = FileStats { path: p.display().to_string(), stage: "sft".into(), ..Default::default() };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if let Ok(r) = parse_record(line) {
                *fs.by_source.entry(r.provenance.as_str().to_string()).or_default() += 1;
                fs.records += 1;
            } else if let Ok(_p) = parse_preference(line) {
                fs.stage = "dpo".into();
                *fs.by_source.entry("preference".into()).or_default() += 1;
                fs.records += 1;
            } else {
                let reason = parse_record(line).err().map(|e| e.to_string()).unwrap_or_default();
                fs.errors.push((i + 1, reason));
            }
        }
        out.push(fs);
    }
    Ok(out)
}

/// Stage / source / count table with per-stage totals.
pub fn render_stats_table(stats: &[FileStats]) -> String {
    let mut agg: BTreeMap<(String, String), usize> = BTreeMap::new();
    for f in stats {
        for (src, n) in &f.by_source {
            *agg.entry((f.stage.to_uppercase(), src.clone())).or_default() += n;
        }
    }
    let mut s = format!("{:<6} {:<14} {:>8}\n", "stage", "source", "count");
    let mut last: Option<String> = None;
    let mut subtotal = 0;
    for ((stage, src), n) in &agg {
        if last.as_ref().is_some_and(|l| l != stage) {
            s.push_str(&format!("{:<6} {:<14} {:>8}\n", last.as_ref().unwrap(), "total", subtotal));
            subtotal = 0;
        }
        s.push_str(&format!("{:<6} {:<14} {:>8}\n", stage, src, n));
        subtotal += n;
        last = Some(stage.clone());
    }
    if let Some(l) = last {
        s.push_str(&format!("{:<6} {:<14} {:>8}\n", l, "total", subtotal));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_snaps_representation_error() {
        assert_eq!(round_half_away(-19.305, 2), -19.31);
        assert_eq!(round_half_away(66.695, 2), 66.70);
        assert_eq!(round_half_away(1633.6, 0), 1634.0);
        assert_eq!(round_half_away(2.5, 0), 3.0);
        assert_eq!(round_half_away(-2.5, 0), -3.0);
    }

    #[test]
    fn single_round_is_identity() {
        for q in [0, 1, 999, 12345] {
            assert_eq!(estimate_llm_calls(q, 0.56, 1, 0.0), Ok(q));
        }
        assert!(estimate_llm_calls(10, 1.2, 3, 0.0).is_err());
        assert!(estimate_llm_calls(10, 0.5, 0, 0.0).is_err());
    }

    #[test]
    fn flip_delta_edges() {
        assert_eq!(flip_delta(&[70.0], 70.0), Ok(0.0));
        assert_eq!(flip_delta(&[], 70.0), Err(AnalyticsError::Empty));
    }

    #[test]
    fn diversity_extremes() {
        let a = vec!["select name from singer".to_string(), "count rows".to_string()];
        assert!((diversity_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = vec!["zzz yyy".to_string()];
        assert_eq!(diversity_score(&a, &b).unwrap(), 0.0);
        assert!(diversity_score(&[], &b).is_err());
    }

    #[test]
    fn breakdown_groups_untagged() {
        let r = |id: &str, cat: Option<&str>, ok: bool| ItemResult {
            id: id.into(),
            dialect: Dialect::Mysql,
            category: cat.map(String::from),
            correct: ok,
            failure: None,
        };
        let rep = EvalReport {
            items: vec![r("a", Some("DB_schema_synonym"), true), r("b", Some("NLQ_keyword_synonym"), false), r("c", None, true)],
            per_dialect: BTreeMap::new(),
            gold_invalid: 0,
            missing_outputs: 0,
            macro_average: 0.0,
        };
        let rows = perturbation_breakdown(&rep);
        assert_eq!(
            rows.iter().map(|r| (r.category.as_str(), r.accuracy)).collect::<Vec<_>>(),
            vec![("DB_schema_synonym", 100.0), ("NLQ_keyword_synonym", 0.0), ("uncategorized", 100.0)]
        );
    }
}
