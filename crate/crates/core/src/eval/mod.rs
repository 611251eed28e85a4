//! Datasets, metrics, strategy comparison and ablations.
//!
//! ```
//! use frem::eval::{exact_match, rouge_l};
//! assert_eq!(exact_match("The lion.", &["lion".to_string()]), 1);
//! let f = rouge_l("the cat on the mat", "the cat sat on the mat");
//! assert!((f - 10.0 / 11.0).abs() < 1e-12);
//! ```

mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{exact_match, lcs_len, metric_tokens, normalize_answer, rouge_l, rouge_l_max, rouge_l_tokens};

use crate::answer::{parse_answer, run_frem, FremContext};
use crate::gateway::{ChatMessage, Gateway, Purpose};
use crate::selection::SelectionConfig;
use crate::template::RawQuestion;

pub const NORMALIZATION: &str = "squad-v2-style";
pub const ROUGE_VARIANT: &str = "lcs-f1-maxgold";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset has no valid records ({} malformed lines)", .0.len())]
    EmptyDataset(Vec<LineError>),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("unknown flag set {0:?}")]
    UnknownFlagSet(String),
    #[error("report encode: {0}")]
    Encode(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub document: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<QARecord>,
    /// Lines that were skipped, with the reason.
    pub errors: Vec<LineError>,
}

fn check_record(rec: &QARecord) -> Result<(), String> {
    if rec.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if rec.document.trim().is_empty() {
        return Err("empty document".into());
    }
    if rec.question.trim().is_empty() {
        return Err("empty question".into());
    }
    if rec.gold_answers.is_empty() {
        return Err("no answers".into());
    }
    Ok(())
}

/// Reads a JSON Lines dataset. Malformed lines are reported and skipped;
/// blank lines are ignored.
pub fn load_dataset(path: &Path) -> Result<Dataset, EvalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<QARecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| check_record(&r).map(|()| r));
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => {
                log::warn!("{}:{}: {message}", path.display(), i + 1);
                errors.push(LineError { line: i + 1, message });
            }
        }
    }
    if records.is_empty() {
        return Err(EvalError::EmptyDataset(errors));
    }
    Ok(Dataset { records, errors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Frem,
    /// One direct prompt with the question and the full document.
    Standard,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Frem => "frem",
            Strategy::Standard => "standard",
        })
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "frem" => Ok(Strategy::Frem),
            "standard" => Ok(Strategy::Standard),
            _ => Err(EvalError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Selection ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagSet {
    Full,
    NoSuw,
    NoScc,
    NoJudge,
}

impl FlagSet {
    pub const ALL: [FlagSet; 4] = [FlagSet::Full, FlagSet::NoSuw, FlagSet::NoScc, FlagSet::NoJudge];

    pub fn name(self) -> &'static str {
        match self {
            FlagSet::Full => "full",
            FlagSet::NoSuw => "no_suw",
            FlagSet::NoScc => "no_scc",
            FlagSet::NoJudge => "no_judge",
        }
    }

    /// `base` with this set's component switched off.
    pub fn apply(self, base: &SelectionConfig) -> SelectionConfig {
        let mut c = SelectionConfig { enable_suw: true, enable_scc: true, enable_judge: true, ..*base };
        match self {
            FlagSet::Full => {}
            FlagSet::NoSuw => c.enable_suw = false,
            FlagSet::NoScc => c.enable_scc = false,
            FlagSet::NoJudge => c.enable_judge = false,
        }
        c
    }
}

impl FromStr for FlagSet {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlagSet::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| EvalError::UnknownFlagSet(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub strategy: Strategy,
    pub prediction: Option<String>,
    pub em: u8,
    pub rouge_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Selection trace and fallbacks for frem runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: serde_json::Value,
    pub model_ids: BTreeMap<String, String>,
    pub backend: String,
    pub normalization: String,
    pub rouge_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub failures: usize,
    /// Mean EM in percent.
    pub em: f64,
    /// Mean ROUGE-L in percent.
    pub rouge_l: f64,
}

impl Aggregates {
    pub fn from_items(items: &[ItemResult]) -> Self {
        let n = items.len();
        let mean = |f: &dyn Fn(&ItemResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                100.0 * items.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Aggregates {
            n,
            failures: items.iter().filter(|i| i.error.is_some()).count(),
            em: mean(&|i| f64::from(i.em)),
            rouge_l: mean(&|i| i.rouge_l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub header: ReportHeader,
    pub aggregates: Aggregates,
    pub per_item: Vec<ItemResult>,
}

impl MetricReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Writes `report` as JSON via a temporary file and rename.
pub fn write_report(report: &MetricReport, path: &Path) -> Result<(), EvalError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, report.to_json_pretty() + "\n")?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn standard_prompt(question: &str, document: &str) -> String {
    format!(
        "Answer the question using the document.\n\nDocument:\n{document}\n\nQuestion: {question}\n\n\
         Give a concise final answer after \"Answer:\".\nAnswer:"
    )
}

fn standard_answer(record: &QARecord, gateway: &Gateway, ordinal: u32) -> Result<String, String> {
    let reply = gateway
        .ask(Purpose::Direct, ordinal, vec![ChatMessage::user(standard_prompt(&record.question, &record.document))])
        .map_err(|e| e.to_string())?;
    parse_answer(&reply).ok_or_else(|| "empty answer".to_string())
}

fn run_item(
    index: usize,
    record: &QARecord,
    strategy: Strategy,
    ctx: &FremContext,
    gateway: &Gateway,
) -> ItemResult {
    let (prediction, trace) = match strategy {
        Strategy::Standard => (standard_answer(record, gateway, index as u32), None),
        Strategy::Frem => match RawQuestion::new(record.id.clone(), record.question.clone()) {
            Err(e) => (Err(format!("template: {e}")), None),
            Ok(q) => match run_frem(&q, &record.document, ctx, gateway) {
                Ok(out) => {
                    let trace = serde_json::json!({
                        "selection": out.trace,
                        "required_skills": out.required,
                        "fallbacks": out.manifest.fallbacks,
                        "focus_fell_back": out.result.focus_fell_back,
                    });
                    (Ok(out.result.answer), Some(trace))
                }
                Err(e) => (Err(e.to_string()), None),
            },
        },
    };
    match prediction {
        Ok(p) => ItemResult {
            id: record.id.clone(),
            strategy,
            em: exact_match(&p, &record.gold_answers),
            rouge_l: rouge_l_max(&p, &record.gold_answers),
            prediction: Some(p),
            error: None,
            trace,
        },
        Err(e) => {
            log::warn!("{}: {e}", record.id);
            ItemResult { id: record.id.clone(), strategy, prediction: None, em: 0, rouge_l: 0.0, error: Some(e), trace }
        }
    }
}

/// Runs `strategy` on every record (in parallel) and scores the answers.
/// A failed item scores 0 on both metrics and carries its error.
pub fn evaluate(dataset: &[QARecord], strategy: Strategy, ctx: &FremContext, gateway: &Gateway) -> MetricReport {
    let per_item: Vec<ItemResult> =
        dataset.par_iter().enumerate().map(|(i, r)| run_item(i, r, strategy, ctx, gateway)).collect();
    MetricReport {
        header: ReportHeader {
            strategy,
            label: None,
            config: ctx.config.to_json(),
            model_ids: [
                ("model".to_string(), gateway.settings().model.clone()),
                ("judge_model".to_string(), gateway.settings().judge_model.clone()),
            ]
            .into(),
            backend: gateway.backend_name().to_string(),
            normalization: NORMALIZATION.into(),
            rouge_variant: ROUGE_VARIANT.into(),
        },
        aggregates: Aggregates::from_items(&per_item),
        per_item,
    }
}

/// One frem evaluation per flag set, labeled with the set's name. Pools
/// are shared across the runs.
pub fn ablation_run(
    dataset: &[QARecord],
    flag_sets: &[FlagSet],
    ctx: &FremContext,
    gateway: &Gateway,
) -> Vec<MetricReport> {
    flag_sets
        .iter()
        .map(|f| {
            let mut variant = ctx.clone();
            variant.config.selection = f.apply(&ctx.config.selection);
            let mut report = evaluate(dataset, Strategy::Frem, &variant, gateway);
            report.header.label = Some(f.name().to_string());
            report
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use std::sync::Arc;

    fn record(id: &str, answers: &[&str]) -> QARecord {
        QARecord {
            id: id.into(),
            document: "The Eiffel Tower was constructed in 1889.".into(),
            question: format!("In what year was tower {id} constructed?"),
            gold_answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn load_good_bad_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = |id: &str| serde_json::to_string(&record(id, &["1889"])).unwrap();
        std::fs::write(&path, format!("{}\n{}\n\n{}\n", good("a"), good("b"), good("c"))).unwrap();
        assert_eq!(load_dataset(&path).unwrap().records.len(), 3);

        let missing = r#"{"id":"x","document":"d","question":"q?"}"#;
        let empty_answers = r#"{"id":"y","document":"d","question":"q?","answers":[]}"#;
        std::fs::write(&path, format!("{}\n{missing}\n{empty_answers}\nnot json\n", good("a"))).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.errors.iter().map(|e| e.line).collect::<Vec<_>>(), [2, 3, 4]);

        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(EvalError::EmptyDataset(_))));
    }

    #[test]
    fn standard_strategy_scores() {
        let data = vec![record("a", &["1889"]), record("b", &["1890"])];
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Direct, "Answer: 1889")));
        let r = evaluate(&data, Strategy::Standard, &FremContext::default(), &gw);
        assert_eq!(r.per_item.iter().map(|i| i.em).collect::<Vec<_>>(), [1, 0]);
        assert_eq!(r.aggregates.em, 50.0);
        assert_eq!(r.header.normalization, "squad-v2-style");
        assert_eq!(r.header.rouge_variant, "lcs-f1-maxgold");
    }

    #[test]
    fn failures_score_zero() {
        let data = vec![record("a", &["1889"])];
        let gw = Gateway::new(Arc::new(MockBackend::new()));
        let r = evaluate(&data, Strategy::Standard, &FremContext::default(), &gw);
        assert_eq!(r.aggregates.failures, 1);
        assert_eq!((r.per_item[0].em, r.per_item[0].rouge_l), (0, 0.0));
        assert!(r.per_item[0].error.is_some());
    }

    #[test]
    fn flag_sets() {
        let base = SelectionConfig { delta: 4, ..Default::default() };
        let c = FlagSet::NoSuw.apply(&base);
        assert!(!c.enable_suw && c.enable_scc && c.enable_judge && c.delta == 4);
        assert!(!FlagSet::NoJudge.apply(&base).enable_judge);
        assert_eq!("no-scc".parse::<FlagSet>().unwrap(), FlagSet::NoScc);
        assert!("bogus".parse::<FlagSet>().is_err());
    }

    #[test]
    fn report_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Direct, "1889")));
        let r = evaluate(&[record("a", &["1889"])], Strategy::Standard, &FremContext::default(), &gw);
        write_report(&r, &path).unwrap();
        let back: MetricReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(!dir.path().join("report.json.tmp").exists());
    }
}
