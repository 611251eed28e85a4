//! Picks the demo whose reasoning path best fits a question.
//!
//! Each demo gets a total score
//! `W = cover(path, required) + sum over path steps of alpha(step)`, where
//! `alpha(s) = ln((M + 1) / (freq(s) + 1))` rewards skills that few demos in
//! the pool use. Before scoring, an optional judge pass keeps only demos
//! whose question a helper model rates above a threshold.
//!
//! ```
//! use frem::selection::uniqueness_weight;
//! assert_eq!(uniqueness_weight(20, 20).unwrap(), 0.0);
//! assert!((uniqueness_weight(20, 0).unwrap() - 21f64.ln()).abs() < 1e-12);
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, GatewayError, Purpose};
use crate::skills::{ReasoningSkill, RequiredSkillSet};
use crate::synthesis::{DemoPool, ReasoningPath, SyntheticDemo};

/// Scores closer than this are ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("demo pool is empty")]
    EmptyPool,
    #[error("skill frequency {freq} exceeds pool size {m}")]
    InconsistentTable { m: usize, freq: usize },
    #[error("required skill set must not be empty")]
    EmptyRequiredSet,
    #[error("no demo scored above delta {delta}")]
    SelectionEmpty { delta: u8 },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiebreakMode {
    /// Ask the judge model to choose among tied demos.
    #[default]
    Llm,
    /// Smallest demo id wins.
    Lexical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Judge threshold; demos need a score strictly above it.
    pub delta: u8,
    pub enable_suw: bool,
    pub enable_scc: bool,
    pub enable_judge: bool,
    pub tiebreak: TiebreakMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { delta: 7, enable_suw: true, enable_scc: true, enable_judge: true, tiebreak: TiebreakMode::Llm }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(1..=10).contains(&self.delta) {
            return Err(SelectionError::InvalidConfig(format!("delta {} outside 1..=10", self.delta)));
        }
        Ok(())
    }
}

/// Demo-level skill counts: `freq(s)` is the number of demos whose path
/// contains `s` at least once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillFrequencyTable {
    freq: BTreeMap<ReasoningSkill, usize>,
    pool_size: usize,
}

impl SkillFrequencyTable {
    pub fn new(freq: BTreeMap<ReasoningSkill, usize>, pool_size: usize) -> Result<Self, SelectionError> {
        if let Some(&f) = freq.values().find(|&&f| f > pool_size) {
            return Err(SelectionError::InconsistentTable { m: pool_size, freq: f });
        }
        Ok(SkillFrequencyTable { freq, pool_size })
    }

    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a ReasoningPath>) -> Self {
        let mut freq = BTreeMap::new();
        let mut m = 0;
        for path in paths {
            m += 1;
            for skill in path.steps().iter().collect::<BTreeSet<_>>() {
                *freq.entry(*skill).or_insert(0) += 1;
            }
        }
        SkillFrequencyTable { freq, pool_size: m }
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn get(&self, skill: ReasoningSkill) -> usize {
        self.freq.get(&skill).copied().unwrap_or(0)
    }

    pub fn alpha(&self, skill: ReasoningSkill) -> Result<f64, SelectionError> {
        uniqueness_weight(self.pool_size, self.get(skill))
    }
}

pub fn skill_frequency(pool: &DemoPool) -> Result<SkillFrequencyTable, SelectionError> {
    if pool.demos.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    Ok(SkillFrequencyTable::from_paths(pool.demos.iter().map(|d| &d.path)))
}

/// `ln((m + 1) / (freq + 1))`.
pub fn uniqueness_weight(m: usize, freq: usize) -> Result<f64, SelectionError> {
    if freq > m {
        return Err(SelectionError::InconsistentTable { m, freq });
    }
    if freq == m {
        return Ok(0.0);
    }
    Ok(((m as f64 + 1.0) / (freq as f64 + 1.0)).ln())
}

/// Fraction of `required` present in the path; repeated steps count once.
pub fn coverage(path: &ReasoningPath, required: &BTreeSet<ReasoningSkill>) -> Result<f64, SelectionError> {
    if required.is_empty() {
        return Err(SelectionError::EmptyRequiredSet);
    }
    let hit = required.iter().filter(|s| path.contains(**s)).count();
    Ok(hit as f64 / required.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeFlag {
    /// The reply's score was outside 1..=10.
    Clamped,
    /// No score could be read; treated as 1.
    ParseFailure,
    /// The judge request failed; treated as 1.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<JudgeFlag>,
}

impl JudgeVerdict {
    fn failed(flag: JudgeFlag) -> Self {
        JudgeVerdict { score: 1, flag: Some(flag) }
    }
}

pub fn judge_prompt(original: &str, synthetic: &str) -> String {
    format!(
        "You are given an original question: {original}\n\
         You also have a synthetic question: {synthetic}\n\
         Your task is to decide how similar the synthetic question is in structure and complexity, \
         compared to the original. Please provide a brief explanation of your reasoning. Then, assign \
         a score from 1 (completely different) to 10 (very similar).\n\
         Example:\n\
         Original Q: \"Who discovered penicillin?\"\n\
         Synthetic Q: \"Which scientist found the mold that led to antibiotics?\"\n\
         Explanation:\n\
         Both questions ask about a discoverer of a major medical breakthrough. The second question \
         focuses on the mold (penicillin), so it is structurally similar and retains the core inquiry \
         about a discovery.\n\
         Score (1-10): 8\n\
         Notes:\n\
         - Provide a short justification.\n\
         - Avoid rewriting or changing the question.\n\
         - Keep the final output concise, ending with the numeric score."
    )
}

fn first_integer(s: &str) -> Option<i64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let neg = s[..start].ends_with('-');
    let digits: String = s[start..].chars().take_while(char::is_ascii_digit).collect();
    let n: i64 = digits.parse().unwrap_or(i64::MAX);
    Some(if neg { -n } else { n })
}

/// Reads the score after the last "Score" label. With a colon, the first
/// integer after it counts (so "Score (1-10): 8" is 8); otherwise the first
/// integer after the label. A reply that is only an integer is accepted.
pub fn parse_judge_score(reply: &str) -> JudgeVerdict {
    let lower = reply.to_ascii_lowercase();
    let raw = match lower.rfind("score") {
        Some(at) => {
            let after = &reply[at + 5..];
            match after.find(':') {
                Some(colon) => first_integer(&after[colon + 1..]),
                None => first_integer(after),
            }
        }
        None => reply.trim().trim_end_matches('.').parse::<i64>().ok(),
    };
    match raw {
        None => JudgeVerdict::failed(JudgeFlag::ParseFailure),
        Some(n) if (1..=10).contains(&n) => JudgeVerdict { score: n as u8, flag: None },
        Some(n) => JudgeVerdict { score: n.clamp(1, 10) as u8, flag: Some(JudgeFlag::Clamped) },
    }
}

pub fn judge_alignment(
    question: &str,
    demo: &SyntheticDemo,
    gateway: &Gateway,
    ordinal: u32,
) -> Result<JudgeVerdict, GatewayError> {
    let reply = gateway.ask(Purpose::Judge, ordinal, vec![ChatMessage::user(judge_prompt(question, &demo.q_syn))])?;
    Ok(parse_judge_score(&reply))
}

/// Judges every demo, in parallel, in pool order. Failed requests become
/// flagged scores of 1.
pub fn judge_pool(pool: &DemoPool, question: &str, gateway: &Gateway) -> Vec<JudgeVerdict> {
    pool.demos
        .par_iter()
        .enumerate()
        .map(|(i, demo)| {
            judge_alignment(question, demo, gateway, i as u32).unwrap_or_else(|e| {
                log::warn!("judge failed for {}: {e}", demo.demo_id);
                JudgeVerdict::failed(JudgeFlag::Unavailable)
            })
        })
        .collect()
}

/// Keeps items scored strictly above `delta`, in input order.
pub fn filter_by_threshold<T: Clone>(scored: &[(T, u8)], delta: u8) -> Vec<(T, u8)> {
    scored.iter().filter(|(_, s)| *s > delta).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDemo {
    pub demo_id: String,
    pub cover: f64,
    pub alpha_sum: f64,
    pub judge_score: Option<u8>,
    #[serde(rename = "W")]
    pub w: f64,
}

/// Scores one demo. `alpha` is summed per path position, so a repeated
/// skill contributes once per occurrence. Disabled terms contribute 0.
pub fn total_score(
    demo: &SyntheticDemo,
    table: &SkillFrequencyTable,
    required: &RequiredSkillSet,
    config: &SelectionConfig,
) -> Result<ScoredDemo, SelectionError> {
    let cover = coverage(&demo.path, required.as_set())?;
    let alpha_sum = demo.path.steps().iter().map(|s| table.alpha(*s)).sum::<Result<f64, _>>()?;
    let w = if config.enable_scc { cover } else { 0.0 } + if config.enable_suw { alpha_sum } else { 0.0 };
    Ok(ScoredDemo { demo_id: demo.demo_id.clone(), cover, alpha_sum, judge_score: demo.judge_score, w })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fallback {
    /// Filtering emptied the pool at the configured threshold; retried one lower.
    LoweredDelta { delta: u8 },
    /// Filtering still emptied the pool; selected without the judge.
    NoJudge,
}

/// One audit line per demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub demo_id: String,
    pub cover: f64,
    pub alpha_sum: f64,
    pub judge_score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_flag: Option<JudgeFlag>,
    #[serde(rename = "W")]
    pub w: f64,
    pub filtered: bool,
    pub tiebreak_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub selected: String,
    pub config: SelectionConfig,
    pub fallbacks: Vec<Fallback>,
    /// Set when the llm tiebreak reply could not be used.
    pub tiebreak_fell_back: bool,
    pub records: Vec<TraceRecord>,
}

impl SelectionTrace {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }
}

pub fn tiebreak_prompt(question: &str, candidates: &[&SyntheticDemo]) -> String {
    let mut p = format!(
        "Original question: {question}\n\nThese candidate questions are tied. Choose the one closest to the \
         original question, considering the textual overlap or domain closeness.\n\n"
    );
    for (i, d) in candidates.iter().enumerate() {
        p.push_str(&format!("{}. {}\n", i + 1, d.q_syn));
    }
    p.push_str("\nReply with the number of the chosen candidate only.");
    p
}

struct Pass {
    winner: usize,
    scored: Vec<ScoredDemo>,
    tied: Vec<usize>,
    tiebreak_fell_back: bool,
}

/// One scoring pass over the demos at `keep` indices.
fn rank(
    pool: &DemoPool,
    keep: &[usize],
    table: &SkillFrequencyTable,
    required: &RequiredSkillSet,
    config: &SelectionConfig,
    question: &str,
    gateway: Option<&Gateway>,
) -> Result<Pass, SelectionError> {
    let scored = pool
        .demos
        .iter()
        .map(|d| total_score(d, table, required, config))
        .collect::<Result<Vec<_>, _>>()?;
    let best = keep.iter().map(|&i| scored[i].w).fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<usize> = keep.iter().copied().filter(|&i| best - scored[i].w <= TIE_TOLERANCE).collect();
    tied.sort_by(|&a, &b| pool.demos[a].demo_id.cmp(&pool.demos[b].demo_id));
    let lexical = tied[0];
    let mut tiebreak_fell_back = false;
    let winner = if tied.len() == 1 {
        lexical
    } else {
        match (config.tiebreak, gateway) {
            (TiebreakMode::Lexical, _) => lexical,
            (TiebreakMode::Llm, gw) => match gw.and_then(|gw| llm_tiebreak(pool, &tied, question, gw)) {
                Some(i) => i,
                None => {
                    tiebreak_fell_back = true;
                    lexical
                }
            },
        }
    };
    Ok(Pass { winner, scored, tied, tiebreak_fell_back })
}

fn llm_tiebreak(pool: &DemoPool, tied: &[usize], question: &str, gateway: &Gateway) -> Option<usize> {
    let candidates: Vec<&SyntheticDemo> = tied.iter().map(|&i| &pool.demos[i]).collect();
    let reply = match gateway.ask(Purpose::Tiebreak, 0, vec![ChatMessage::user(tiebreak_prompt(question, &candidates))]) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("tiebreak request failed: {e}");
            return None;
        }
    };
    let n = first_integer(&reply)?;
    (1..=tied.len() as i64).contains(&n).then(|| tied[n as usize - 1])
}

/// Outcome of selection: the winning demo id and the audit trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub demo_id: String,
    pub trace: SelectionTrace,
}

/// Single selection pass. With the judge enabled, demos are judged and
/// filtered at `config.delta` first; if none survive the result is
/// `SelectionEmpty`. See [`select_with_fallback`] for the retry ladder.
pub fn select_best(
    pool: &DemoPool,
    question: &str,
    required: &RequiredSkillSet,
    config: &SelectionConfig,
    gateway: Option<&Gateway>,
) -> Result<Selection, SelectionError> {
    let verdicts = judge_if_enabled(pool, question, config, gateway)?;
    select_pass(pool, question, required, config, gateway, verdicts.as_deref(), Some(config.delta), Vec::new())
}

/// Selection with the fallback ladder: threshold `delta`, then `delta - 1`,
/// then no judge filtering. Judge scores are computed once.
pub fn select_with_fallback(
    pool: &DemoPool,
    question: &str,
    required: &RequiredSkillSet,
    config: &SelectionConfig,
    gateway: Option<&Gateway>,
) -> Result<Selection, SelectionError> {
    let verdicts = judge_if_enabled(pool, question, config, gateway)?;
    let Some(verdicts) = verdicts else {
        return select_pass(pool, question, required, config, gateway, None, None, Vec::new());
    };
    let mut fallbacks = Vec::new();
    let mut ladder = vec![config.delta];
    if config.delta > 0 {
        ladder.push(config.delta - 1);
    }
    for delta in ladder {
        match select_pass(pool, question, required, config, gateway, Some(&verdicts), Some(delta), fallbacks.clone()) {
            Err(SelectionError::SelectionEmpty { .. }) => {
                log::info!("no demo above delta {delta}");
                fallbacks.push(if delta == config.delta {
                    Fallback::LoweredDelta { delta: delta.saturating_sub(1) }
                } else {
                    Fallback::NoJudge
                });
            }
            other => return other,
        }
    }
    select_pass(pool, question, required, config, gateway, Some(&verdicts), None, fallbacks)
}

fn judge_if_enabled(
    pool: &DemoPool,
    question: &str,
    config: &SelectionConfig,
    gateway: Option<&Gateway>,
) -> Result<Option<Vec<JudgeVerdict>>, SelectionError> {
    config.validate()?;
    if pool.demos.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    if !config.enable_judge {
        return Ok(None);
    }
    Ok(Some(match gateway {
        Some(gw) => judge_pool(pool, question, gw),
        // Without a gateway, scores already stored on the demos are used.
        None => pool
            .demos
            .iter()
            .map(|d| match d.judge_score {
                Some(s) => JudgeVerdict { score: s, flag: None },
                None => JudgeVerdict::failed(JudgeFlag::Unavailable),
            })
            .collect(),
    }))
}

#[allow(clippy::too_many_arguments)]
fn select_pass(
    pool: &DemoPool,
    question: &str,
    required: &RequiredSkillSet,
    config: &SelectionConfig,
    gateway: Option<&Gateway>,
    verdicts: Option<&[JudgeVerdict]>,
    delta: Option<u8>,
    fallbacks: Vec<Fallback>,
) -> Result<Selection, SelectionError> {
    let table = skill_frequency(pool)?;
    let keep: Vec<usize> = match (verdicts, delta) {
        (Some(v), Some(delta)) => {
            let indexed: Vec<(usize, u8)> = v.iter().map(|j| j.score).enumerate().collect();
            filter_by_threshold(&indexed, delta).into_iter().map(|(i, _)| i).collect()
        }
        _ => (0..pool.demos.len()).collect(),
    };
    if keep.is_empty() {
        return Err(SelectionError::SelectionEmpty { delta: delta.unwrap_or(0) });
    }
    let pass = rank(pool, &keep, &table, required, config, question, gateway)?;
    let needed_tiebreak = pass.tied.len() > 1;
    let records = pass
        .scored
        .into_iter()
        .enumerate()
        .map(|(i, s)| TraceRecord {
            demo_id: s.demo_id,
            cover: s.cover,
            alpha_sum: s.alpha_sum,
            judge_score: verdicts.map(|v| v[i].score).or(s.judge_score),
            judge_flag: verdicts.and_then(|v| v[i].flag),
            w: s.w,
            filtered: !keep.contains(&i),
            tiebreak_used: needed_tiebreak && pass.tied.contains(&i),
        })
        .collect();
    let demo_id = pool.demos[pass.winner].demo_id.clone();
    Ok(Selection {
        demo_id: demo_id.clone(),
        trace: SelectionTrace {
            selected: demo_id,
            config: *config,
            fallbacks,
            tiebreak_fell_back: pass.tiebreak_fell_back,
            records,
        },
    })
}
