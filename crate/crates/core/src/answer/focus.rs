use std::collections::BTreeSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnswerError;
use crate::gateway::{ChatMessage, Gateway, Purpose};
use crate::skills::ReasoningSkill;
use crate::synthesis::ReasoningPath;
use crate::template::{RawQuestion, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMode {
    /// Sentences ranked by word overlap with the question.
    #[default]
    Lexical,
    /// Verbatim quotes requested from the model, grounded by substring search.
    Llm,
}

/// A verbatim slice of the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusSegment {
    pub text: String,
    pub source_span: Range<usize>,
    /// Path step that first asked for this text.
    pub skill_index: usize,
}

/// Segments in document order, non-overlapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusDocument {
    pub segments: Vec<FocusSegment>,
}

impl FocusDocument {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn text(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// The whole document as one segment.
    pub fn full(document: &str) -> Self {
        FocusDocument {
            segments: vec![FocusSegment { text: document.to_string(), source_span: 0..document.len(), skill_index: 0 }],
        }
    }

    /// Sorts candidate spans and coalesces overlapping ones.
    pub fn merge(document: &str, mut spans: Vec<(Range<usize>, usize)>) -> Self {
        spans.sort_by_key(|(r, step)| (r.start, r.end, *step));
        let mut merged: Vec<(Range<usize>, usize)> = Vec::new();
        for (r, step) in spans {
            if r.is_empty() {
                continue;
            }
            match merged.last_mut() {
                Some((last, last_step)) if r.start < last.end => {
                    last.end = last.end.max(r.end);
                    *last_step = (*last_step).min(step);
                }
                _ => merged.push((r, step)),
            }
        }
        FocusDocument {
            segments: merged
                .into_iter()
                .map(|(r, step)| FocusSegment { text: document[r.clone()].to_string(), source_span: r, skill_index: step })
                .collect(),
        }
    }
}

/// Sentence spans with surrounding whitespace trimmed. A sentence ends at
/// `.`, `!` or `?` followed by whitespace, or at a line break.
pub fn split_sentences(document: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = document.as_bytes();
    let push = |from: usize, to: usize, out: &mut Vec<Range<usize>>| {
        let piece = &document[from..to];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            out.push(from + lead..from + lead + trimmed.len());
        }
    };
    for (i, c) in document.char_indices() {
        let end_mark = matches!(c, '.' | '!' | '?') && bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace());
        if c == '\n' || end_mark {
            let to = if c == '\n' { i } else { i + 1 };
            push(start, to, &mut out);
            start = i + 1;
        }
    }
    push(start, document.len(), &mut out);
    out
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before", "being",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "of", "on", "or", "she", "so", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "whose", "why", "will", "with", "would", "you",
];

fn content_words(text: &str) -> BTreeSet<String> {
    crate::template::scan(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Punctuation)
        .map(|t| t.surface.to_lowercase())
        .filter(|w| STOPWORDS.binary_search(&w.as_str()).is_err())
        .collect()
}

fn skill_cues(skill: ReasoningSkill) -> &'static [&'static str] {
    match skill {
        ReasoningSkill::Deductive => &[],
        ReasoningSkill::Inductive => &["usually", "often", "typically", "generally", "most", "many"],
        ReasoningSkill::Abductive => &["likely", "probably", "suggests", "evidence", "perhaps"],
        ReasoningSkill::CauseEffect => &["because", "caused", "cause", "due", "result", "led", "therefore"],
        ReasoningSkill::Analogical => &["like", "similar", "similarly", "both", "same", "compared"],
        ReasoningSkill::CriticalThinking => &["however", "although", "claim", "argue", "despite", "but"],
        ReasoningSkill::Decompositional => &["first", "then", "also", "part", "includes", "and"],
    }
}

const SENTENCES_PER_STEP: usize = 2;

fn lexical_spans(document: &str, path: &ReasoningPath, question: &str) -> Vec<(Range<usize>, usize)> {
    let sentences = split_sentences(document);
    if sentences.len() == 1 {
        return vec![(sentences[0].clone(), 0)];
    }
    let q_words = content_words(question);
    let words: Vec<BTreeSet<String>> = sentences.iter().map(|r| content_words(&document[r.clone()])).collect();
    let mut spans = Vec::new();
    for (step, skill) in path.steps().iter().enumerate() {
        let cues = skill_cues(*skill);
        let mut ranked: Vec<(usize, usize, usize)> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.intersection(&q_words).count(), cues.iter().filter(|c| w.contains(**c)).count(), i))
            .filter(|(overlap, _, _)| *overlap > 0)
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        spans.extend(ranked.into_iter().take(SENTENCES_PER_STEP).map(|(_, _, i)| (sentences[i].clone(), step)));
    }
    spans
}

pub(crate) fn extraction_prompt(document: &str, question: &str, skill: ReasoningSkill, step: usize) -> String {
    format!(
        "Document:\n{document}\n\nQuestion: {question}\n\n\
         Step {} of the reasoning uses {} reasoning: {}\n\
         Quote the sentences or phrases from the document that this step needs. Copy them verbatim, \
         one quote per line, and output nothing else. If nothing is relevant, output NONE.",
        step + 1,
        skill.name(),
        skill.description()
    )
}

fn llm_spans(document: &str, path: &ReasoningPath, question: &str, gateway: &Gateway) -> Vec<(Range<usize>, usize)> {
    path.steps()
        .par_iter()
        .enumerate()
        .map(|(step, skill)| {
            let reply = match gateway.ask(
                Purpose::FocusExtract,
                step as u32,
                vec![ChatMessage::user(extraction_prompt(document, question, *skill, step))],
            ) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("focus extraction for step {} failed: {e}", step + 1);
                    return Vec::new();
                }
            };
            reply
                .lines()
                .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim().trim_matches('"').trim())
                .filter(|q| !q.is_empty() && *q != "NONE")
                .filter_map(|q| document.find(q).map(|at| (at..at + q.len(), step)))
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

/// Collects the parts of `document` each path step needs. Lexical mode
/// takes, per step, the two sentences sharing most content words with the
/// question (skill cue words break ties); llm mode asks the model for
/// verbatim quotes and keeps only those found in the document.
pub fn extract_focus(
    document: &str,
    path: &ReasoningPath,
    question: &RawQuestion,
    gateway: Option<&Gateway>,
    mode: FocusMode,
) -> Result<FocusDocument, AnswerError> {
    if document.trim().is_empty() {
        return Err(AnswerError::InvalidDocument);
    }
    let spans = match (mode, gateway) {
        (FocusMode::Llm, Some(gw)) => llm_spans(document, path, &question.text, gw),
        (FocusMode::Llm, None) => {
            return Err(AnswerError::InvalidConfig("llm focus extraction needs a gateway".into()));
        }
        (FocusMode::Lexical, _) => lexical_spans(document, path, &question.text),
    };
    let focus = FocusDocument::merge(document, spans);
    if focus.is_empty() {
        return Err(AnswerError::FocusEmpty);
    }
    Ok(focus)
}
