//! Placeholder identification: deciding which question tokens are replaceable
//! (named entities and key numbers) and which belong to the fixed structure.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::{scan, QToken, TokenKind};
use super::TemplateError;
use crate::gateway::{ChatMessage, Gateway, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderType {
    Person,
    Location,
    Organization,
    Date,
    Number,
    Event,
    Other,
}

impl PlaceholderType {
    pub const ALL: [PlaceholderType; 7] = [
        PlaceholderType::Person,
        PlaceholderType::Location,
        PlaceholderType::Organization,
        PlaceholderType::Date,
        PlaceholderType::Number,
        PlaceholderType::Event,
        PlaceholderType::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlaceholderType::Person => "person",
            PlaceholderType::Location => "location",
            PlaceholderType::Organization => "organization",
            PlaceholderType::Date => "date",
            PlaceholderType::Number => "number",
            PlaceholderType::Event => "event",
            PlaceholderType::Other => "other",
        }
    }
}

impl fmt::Display for PlaceholderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlaceholderType {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_lowercase();
        PlaceholderType::ALL
            .into_iter()
            .find(|t| t.name() == lowered)
            .ok_or_else(|| TemplateError::UnknownPlaceholderType(s.trim().to_string()))
    }
}

/// Inclusive range of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub first: usize,
    pub last: usize,
}

impl TokenSpan {
    pub fn contains(&self, idx: usize) -> bool {
        self.first <= idx && idx <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placeholder {
    pub surface: String,
    pub ptype: PlaceholderType,
    pub token_span: TokenSpan,
    pub byte_start: usize,
    pub byte_end: usize,
}

impl Placeholder {
    /// Builds a placeholder covering `tokens[first..=last]` of `text`.
    pub fn from_span(
        text: &str,
        tokens: &[QToken],
        first: usize,
        last: usize,
        ptype: PlaceholderType,
    ) -> Self {
        let (byte_start, byte_end) = (tokens[first].byte_start, tokens[last].byte_end);
        Placeholder {
            surface: text[byte_start..byte_end].to_string(),
            ptype,
            token_span: TokenSpan { first, last },
            byte_start,
            byte_end,
        }
    }
}

/// Anything that can mark replaceable tokens in a tokenized question.
pub trait EntityIdentifier {
    /// Returns the placeholders found in `tokens`, which were produced from
    /// `text`. Spans must be disjoint; order is not required.
    fn identify(&self, text: &str, tokens: &[QToken]) -> Result<Vec<Placeholder>, TemplateError>;
}

/// Case-insensitive multi-token dictionary of known entities.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    // first token (lowercased) -> entries starting with it, longest first
    by_head: HashMap<String, Vec<(Vec<String>, PlaceholderType)>>,
    len: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, ptype: PlaceholderType) {
        let key: Vec<String> = scan(surface).into_iter().map(|t| t.surface.to_lowercase()).collect();
        let Some(head) = key.first().cloned() else {
            return;
        };
        let bucket = self.by_head.entry(head).or_default();
        if let Some(existing) = bucket.iter_mut().find(|(k, _)| *k == key) {
            existing.1 = ptype;
            return;
        }
        bucket.push((key, ptype));
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        self.len += 1;
    }

    pub fn with(mut self, surface: &str, ptype: PlaceholderType) -> Self {
        self.insert(surface, ptype);
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Parses `surface<TAB>type` lines. Blank lines and `#` comments are skipped.
    pub fn parse(contents: &str) -> Result<Self, TemplateError> {
        let mut gaz = Gazetteer::new();
        for (lineno, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (surface, ptype) = line.split_once('\t').ok_or(TemplateError::GazetteerLine {
                line: lineno + 1,
                reason: "expected surface<TAB>type".into(),
            })?;
            let ptype = ptype.parse().map_err(|_| TemplateError::GazetteerLine {
                line: lineno + 1,
                reason: format!("unknown type {:?}", ptype.trim()),
            })?;
            gaz.insert(surface.trim(), ptype);
        }
        Ok(gaz)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let contents = std::fs::read_to_string(path)?;
        Self::parse(&contents)
    }

    /// Longest entry matching the tokens starting at `at`, as (token count, type).
    pub fn longest_match(&self, tokens: &[QToken], at: usize) -> Option<(usize, PlaceholderType)> {
        let head = tokens.get(at)?.surface.to_lowercase();
        self.by_head.get(&head)?.iter().find_map(|(key, ptype)| {
            let window = tokens.get(at..at + key.len())?;
            window
                .iter()
                .zip(key)
                .all(|(t, k)| t.surface.to_lowercase() == *k)
                .then_some((key.len(), *ptype))
        })
    }
}

// Capitalized words that are never entity starts on their own.
const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "after", "also", "an", "and", "any", "are", "as", "at", "be", "before", "both",
    "but", "by", "can", "could", "describe", "did", "do", "does", "during", "each", "explain",
    "for", "from", "give", "had", "has", "have", "how", "i", "if", "in", "into", "is", "it",
    "list", "many", "much", "name", "no", "not", "of", "on", "or", "should", "since", "so", "some",
    "tell", "that", "the", "their", "then", "there", "these", "they", "this", "those", "to",
    "under", "was", "were", "what", "when", "where", "whether", "which", "while", "who", "whom",
    "whose", "why", "will", "with", "would", "yes",
];

fn is_function_word(surface: &str) -> bool {
    let lowered = surface.to_lowercase();
    FUNCTION_WORDS.binary_search(&lowered.as_str()).is_ok()
}

/// Deterministic identifier: gazetteer entries first (longest match), then
/// every number token, then runs of consecutive capitalized non-function
/// words, which become `other` placeholders.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedIdentifier {
    pub gazetteer: Gazetteer,
}

impl RuleBasedIdentifier {
    pub fn new(gazetteer: Gazetteer) -> Self {
        Self { gazetteer }
    }
}

impl EntityIdentifier for RuleBasedIdentifier {
    fn identify(&self, text: &str, tokens: &[QToken]) -> Result<Vec<Placeholder>, TemplateError> {
        let is_candidate = |t: &QToken| t.is_capitalized() && !is_function_word(&t.surface);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if let Some((len, ptype)) = self.gazetteer.longest_match(tokens, i) {
                out.push(Placeholder::from_span(text, tokens, i, i + len - 1, ptype));
                i += len;
            } else if tokens[i].kind == TokenKind::Number {
                out.push(Placeholder::from_span(text, tokens, i, i, PlaceholderType::Number));
                i += 1;
            } else if is_candidate(&tokens[i]) {
                let mut j = i;
                while j + 1 < tokens.len()
                    && is_candidate(&tokens[j + 1])
                    && self.gazetteer.longest_match(tokens, j + 1).is_none()
                {
                    j += 1;
                }
                out.push(Placeholder::from_span(text, tokens, i, j, PlaceholderType::Other));
                i = j + 1;
            } else {
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Asks the language model to list entities and key numbers, then grounds
/// each listed surface in the token sequence. Unlocatable surfaces are dropped.
pub struct LlmIdentifier<'a> {
    pub gateway: &'a Gateway,
}

impl LlmIdentifier<'_> {
    pub fn prompt(text: &str) -> String {
        let types: Vec<_> = PlaceholderType::ALL.iter().map(|t| t.name()).collect();
        format!(
            "Identify every named entity or key number in the question below that could be \
             replaced by a different term of the same kind.\n\
             Allowed types: {}.\n\
             Output one item per line as: surface<TAB>type\n\
             Copy each surface exactly as it appears in the question. Output nothing else.\n\n\
             Question: {text}",
            types.join(", ")
        )
    }

    fn locate(tokens: &[QToken], text: &str, surface: &str, taken: &[bool]) -> Option<(usize, usize)> {
        for first in 0..tokens.len() {
            if taken[first] {
                continue;
            }
            for last in first..tokens.len() {
                if taken[last] {
                    break;
                }
                let slice = &text[tokens[first].byte_start..tokens[last].byte_end];
                if slice == surface {
                    return Some((first, last));
                }
                if slice.len() >= surface.len() {
                    break;
                }
            }
        }
        None
    }
}

impl EntityIdentifier for LlmIdentifier<'_> {
    fn identify(&self, text: &str, tokens: &[QToken]) -> Result<Vec<Placeholder>, TemplateError> {
        let reply = self
            .gateway
            .ask(Purpose::Identify, 0, vec![ChatMessage::user(Self::prompt(text))])
            .map_err(|e| TemplateError::IdentifierUnavailable(e.to_string()))?;
        let mut taken = vec![false; tokens.len()];
        let mut out = Vec::new();
        for line in reply.lines() {
            let line = line.trim();
            let (surface, ptype) = match line.split_once('\t').or_else(|| line.split_once('|')) {
                Some((s, t)) => (s.trim(), t.parse().unwrap_or(PlaceholderType::Other)),
                None => continue,
            };
            let surface = surface.trim_matches('"');
            if surface.is_empty() {
                continue;
            }
            if let Some((first, last)) = Self::locate(tokens, text, surface, &taken) {
                taken[first..=last].iter_mut().for_each(|t| *t = true);
                out.push(Placeholder::from_span(text, tokens, first, last, ptype));
            }
        }
        Ok(out)
    }
}

/// Splits `tokens` into placeholders (sorted by position) and structure tokens.
pub fn identify_placeholders(
    text: &str,
    tokens: &[QToken],
    identifier: &dyn EntityIdentifier,
) -> Result<(Vec<Placeholder>, Vec<QToken>), TemplateError> {
    let mut placeholders = identifier.identify(text, tokens)?;
    placeholders.sort_by_key(|p| p.token_span.first);
    check_spans(&placeholders, tokens.len())?;
    let structure = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !placeholders.iter().any(|p| p.token_span.contains(*i)))
        .map(|(_, t)| t.clone())
        .collect();
    Ok((placeholders, structure))
}

/// Placeholders must be sorted, in bounds and pairwise disjoint.
pub(crate) fn check_spans(placeholders: &[Placeholder], n_tokens: usize) -> Result<(), TemplateError> {
    let mut next_free = 0;
    for p in placeholders {
        let TokenSpan { first, last } = p.token_span;
        if first > last || last >= n_tokens || first < next_free {
            return Err(TemplateError::MalformedPartition(format!(
                "placeholder {:?} spans tokens {first}..={last}",
                p.surface
            )));
        }
        next_free = last + 1;
    }
    Ok(())
}
