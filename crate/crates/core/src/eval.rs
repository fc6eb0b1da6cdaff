//! Scoring task splitting and task classification against a labelled
//! requirement corpus.
//!
//! Splitting is scored per bucket (one, two, three or more clauses) and
//! combined with a size-weighted average. A case passes when the predicted
//! clause list has the gold length and every clause matches its gold clause
//! as a set of normalized tokens. Classification is scored on single-clause
//! cases by category only.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::mock::{chat_digest, Scenario};
use crate::backend::ChatModel;
use crate::exec::Exec;
use crate::planner::{
    classify_prompt, classify_with_model, classify_with_rules, split_deterministic, split_prompt, split_with_model,
    Category, ModelClassifyFailure,
};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Single,
    Dual,
    Multi,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Single, Bucket::Dual, Bucket::Multi];

    pub fn for_count(clauses: usize) -> Option<Self> {
        match clauses {
            0 => None,
            1 => Some(Bucket::Single),
            2 => Some(Bucket::Dual),
            _ => Some(Bucket::Multi),
        }
    }

    /// Column heading in the table report.
    pub fn heading(self) -> &'static str {
        match self {
            Bucket::Single => "1",
            Bucket::Dual => "2",
            Bucket::Multi => "3+",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldTask {
    pub category: Category,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RequirementCase {
    pub text: String,
    pub gold_clauses: Vec<String>,
    pub gold_tasks: Vec<GoldTask>,
    pub bucket: Bucket,
}

impl RequirementCase {
    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        if self.gold_clauses.iter().any(|c| c.trim().is_empty()) {
            return Err("goldClauses contains an empty clause".into());
        }
        if Bucket::for_count(self.gold_clauses.len()) != Some(self.bucket) {
            return Err(format!(
                "bucket {:?} does not match {} gold clause(s)",
                self.bucket,
                self.gold_clauses.len()
            ));
        }
        if self.gold_tasks.len() != self.gold_clauses.len() {
            return Err(format!(
                "{} goldTasks for {} goldClauses",
                self.gold_tasks.len(),
                self.gold_clauses.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus has no cases")]
    Empty,
    #[error("corpus line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Parses JSON lines; blank lines are skipped, the first bad line is
/// reported with its 1-based number.
pub fn parse_corpus(src: &str) -> Result<Vec<RequirementCase>, CorpusError> {
    let mut cases = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Line { line: i + 1, message };
        let case: RequirementCase = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        case.validate().map_err(bad)?;
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(cases)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RequirementCase>, CorpusError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&src)
}

/// The corpus shipped with the crate.
pub fn shipped_corpus() -> Vec<RequirementCase> {
    parse_corpus(crate::resources::CORPUS_JSONL).expect("shipped corpus is valid")
}

pub fn bucket_counts(cases: &[RequirementCase]) -> Vec<(Bucket, usize)> {
    Bucket::ALL
        .into_iter()
        .map(|b| (b, cases.iter().filter(|c| c.bucket == b).count()))
        .collect()
}

fn token_set(s: &str) -> BTreeSet<String> {
    text::tokens(s).into_iter().collect()
}

/// Case- and punctuation-insensitive token-set equality.
pub fn clause_matches(predicted: &str, gold: &str) -> bool {
    let p = token_set(predicted);
    !p.is_empty() && p == token_set(gold)
}

pub fn split_matches(predicted: &[String], gold: &[String]) -> bool {
    predicted.len() == gold.len() && predicted.iter().zip(gold).all(|(p, g)| clause_matches(p, g))
}

/// `Σ accuracy·size / Σ size` over `(accuracy, size)` pairs; 0 when every
/// size is 0.
pub fn weighted_average(rows: &[(f64, usize)]) -> f64 {
    let total: usize = rows.iter().map(|r| r.1).sum();
    if total == 0 {
        return 0.0;
    }
    rows.iter().map(|(a, n)| a * *n as f64).sum::<f64>() / total as f64
}

fn percent(passed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        passed as f64 * 100.0 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Split,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BucketScore {
    pub bucket: Bucket,
    pub cases: usize,
    pub passed: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseResult {
    /// 1-based position among the scored cases.
    pub case: usize,
    pub task: EvalTask,
    pub bucket: Bucket,
    pub text: String,
    pub passed: bool,
    pub expected: Vec<String>,
    pub predicted: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub backend: String,
    pub per_bucket: Vec<BucketScore>,
    pub weighted_average: Option<f64>,
    pub classification_accuracy: Option<f64>,
    pub classification_cases: usize,
    pub case_results: Vec<CaseResult>,
}

impl EvalReport {
    pub fn new(backend: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            per_bucket: Vec::new(),
            weighted_average: None,
            classification_accuracy: None,
            classification_cases: 0,
            case_results: Vec::new(),
        }
    }

    /// Checks the weighted-average identity and the percentage range.
    pub fn check(&self) -> Result<(), String> {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        for b in &self.per_bucket {
            if !in_range(b.accuracy) {
                return Err(format!("{:?} accuracy {} out of range", b.bucket, b.accuracy));
            }
        }
        if let Some(avg) = self.weighted_average {
            let rows: Vec<_> = self.per_bucket.iter().map(|b| (b.accuracy, b.cases)).collect();
            let expect = weighted_average(&rows);
            if (avg - expect).abs() > 1e-9 || !in_range(avg) {
                return Err(format!("weighted average {avg} != {expect}"));
            }
        }
        if let Some(c) = self.classification_accuracy {
            if !in_range(c) {
                return Err(format!("classification accuracy {c} out of range"));
            }
        }
        Ok(())
    }
}

/// Predicts the clause list for a requirement.
pub trait Splitter: Sync {
    fn split(&self, requirement: &str) -> Result<Vec<String>, String>;
}

/// Predicts the category of one clause.
pub trait Classifier: Sync {
    fn classify(&self, clause: &str) -> Result<Category, String>;
}

/// Scores a chat backend through the model-only paths: no rule fallback.
pub struct ModelScorer<'a>(pub &'a dyn ChatModel);

impl Splitter for ModelScorer<'_> {
    fn split(&self, requirement: &str) -> Result<Vec<String>, String> {
        split_with_model(requirement, self.0).map_err(|r| match r {
            None => "backend failed".to_string(),
            Some(reply) => format!("off-format reply: {reply}"),
        })
    }
}

impl Classifier for ModelScorer<'_> {
    fn classify(&self, clause: &str) -> Result<Category, String> {
        classify_with_model(clause, self.0).map(|t| t.category).map_err(|e| match e {
            ModelClassifyFailure::Unavailable => "backend failed".to_string(),
            ModelClassifyFailure::OffFormat(reply) => format!("off-format reply: {reply}"),
            ModelClassifyFailure::Invalid(e) => e.to_string(),
        })
    }
}

/// The deterministic rule-based planner paths, as a baseline.
pub struct RuleScorer;

impl Splitter for RuleScorer {
    fn split(&self, requirement: &str) -> Result<Vec<String>, String> {
        Ok(split_deterministic(requirement))
    }
}

impl Classifier for RuleScorer {
    fn classify(&self, clause: &str) -> Result<Category, String> {
        classify_with_rules(clause).map(|t| t.category).map_err(|e| e.to_string())
    }
}

impl<F> Splitter for F
where
    F: Fn(&str) -> Result<Vec<String>, String> + Sync,
{
    fn split(&self, requirement: &str) -> Result<Vec<String>, String> {
        self(requirement)
    }
}

pub fn score_splitting(report: &mut EvalReport, cases: &[RequirementCase], splitter: &dyn Splitter, exec: Exec) {
    let outcomes = exec.map(cases, |c| splitter.split(&c.text));
    let mut results = Vec::with_capacity(cases.len());
    for (i, (case, outcome)) in cases.iter().zip(outcomes).enumerate() {
        let (predicted, error) = match outcome {
            Ok(p) => (p, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        results.push(CaseResult {
            case: i + 1,
            task: EvalTask::Split,
            bucket: case.bucket,
            text: case.text.clone(),
            passed: error.is_none() && split_matches(&predicted, &case.gold_clauses),
            expected: case.gold_clauses.clone(),
            predicted,
            error,
        });
    }
    report.per_bucket = Bucket::ALL
        .into_iter()
        .filter_map(|b| {
            let n = results.iter().filter(|r| r.bucket == b).count();
            let passed = results.iter().filter(|r| r.bucket == b && r.passed).count();
            (n > 0).then(|| BucketScore {
                bucket: b,
                cases: n,
                passed,
                accuracy: percent(passed, n),
            })
        })
        .collect();
    let rows: Vec<_> = report.per_bucket.iter().map(|b| (b.accuracy, b.cases)).collect();
    report.weighted_average = Some(weighted_average(&rows));
    report.case_results.extend(results);
}

/// Scores categories on the single-clause cases only.
pub fn score_classification(
    report: &mut EvalReport,
    cases: &[RequirementCase],
    classifier: &dyn Classifier,
    exec: Exec,
) {
    let singles: Vec<&RequirementCase> = cases.iter().filter(|c| c.bucket == Bucket::Single).collect();
    let outcomes = exec.map(&singles, |c| classifier.classify(&c.gold_clauses[0]));
    let mut passed = 0;
    for (i, (case, outcome)) in singles.iter().zip(outcomes).enumerate() {
        let gold = case.gold_tasks[0].category;
        let (predicted, error) = match outcome {
            Ok(c) => (vec![c.name().to_string()], None),
            Err(e) => (Vec::new(), Some(e)),
        };
        let ok = predicted.first().map(String::as_str) == Some(gold.name());
        passed += usize::from(ok);
        report.case_results.push(CaseResult {
            case: i + 1,
            task: EvalTask::Classify,
            bucket: case.bucket,
            text: case.gold_clauses[0].clone(),
            passed: ok,
            expected: vec![gold.name().to_string()],
            predicted,
            error,
        });
    }
    report.classification_cases = singles.len();
    report.classification_accuracy = Some(percent(passed, singles.len()));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Json,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}%"))
}

/// Renders the report; the table columns are 1, 2, 3+, Average and
/// Classification.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("plain report serializes"),
        ReportFormat::Table => {
            let bucket = |b: Bucket| report.per_bucket.iter().find(|s| s.bucket == b).map(|s| s.accuracy);
            let mut row = vec![report.backend.clone()];
            row.extend(Bucket::ALL.into_iter().map(|b| cell(bucket(b))));
            row.push(cell(report.weighted_average));
            row.push(cell(report.classification_accuracy));
            let head = ["Backend", "1", "2", "3+", "Average", "Classification"];
            let widths: Vec<usize> = head.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
            let line = |cells: &[&str]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect::<Vec<_>>()
                    .join(" | ")
            };
            let mut out = String::new();
            let _ = writeln!(out, "{}", line(&head));
            let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{}", line(&cells));
            out
        }
    }
}

fn gold_classification(task: &GoldTask) -> String {
    let field = |f: &Option<String>| f.as_deref().filter(|s| !s.trim().is_empty()).unwrap_or("-").to_string();
    let target = match (task.category, &task.source, &task.target) {
        (Category::Recoloring, Some(s), Some(t)) => t.strip_suffix(s.as_str()).map(str::trim).unwrap_or(t).to_string(),
        _ => field(&task.target),
    };
    format!("{}|{}|{}", task.category, field(&task.source), if target.is_empty() { "-".into() } else { target })
}

/// A mock scenario whose chat backend answers every splitting and
/// classification prompt for `cases` with the gold answer.
pub fn gold_scenario(cases: &[RequirementCase]) -> Scenario {
    let mut scenario = Scenario::builtin();
    for case in cases {
        scenario
            .chat
            .insert(chat_digest(&split_prompt(&case.text)), case.gold_clauses.join(" | "));
        for (clause, task) in case.gold_clauses.iter().zip(&case.gold_tasks) {
            scenario
                .chat
                .insert(chat_digest(&classify_prompt(clause)), gold_classification(task));
        }
    }
    scenario
}
