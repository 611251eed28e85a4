//! Question templates: a question split into fixed structure text and typed,
//! replaceable slots.
//!
//! ```
//! use frem::template::{Gazetteer, PlaceholderType, QuestionTemplate, RawQuestion, RuleBasedIdentifier};
//!
//! let gaz = Gazetteer::new().with("Bill Gates", PlaceholderType::Person);
//! let q = RawQuestion::new("q1", "What is Bill Gates known for?").unwrap();
//! let template = QuestionTemplate::from_question(&q, &RuleBasedIdentifier::new(gaz)).unwrap();
//! assert_eq!(template.display(), "What is [person] known for?");
//! assert_eq!(template.render_with(&["Marie Curie"]).unwrap(), "What is Marie Curie known for?");
//! ```

mod identify;
mod tokenize;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use identify::{
    identify_placeholders, EntityIdentifier, Gazetteer, LlmIdentifier, Placeholder,
    PlaceholderType, RuleBasedIdentifier, TokenSpan,
};
pub use tokenize::{tokenize, QToken, TokenKind};

pub(crate) use tokenize::scan;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("question text is empty")]
    InvalidQuestion,
    #[error("entity identifier unavailable: {0}")]
    IdentifierUnavailable(String),
    #[error("placeholders do not partition the question tokens: {0}")]
    MalformedPartition(String),
    #[error("no binding for slot(s) {0:?}")]
    IncompleteBindings(Vec<usize>),
    #[error("unknown placeholder type {0:?}")]
    UnknownPlaceholderType(String),
    #[error("gazetteer line {line}: {reason}")]
    GazetteerLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawQuestion {
    pub id: String,
    pub text: String,
}

impl RawQuestion {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TemplateError::InvalidQuestion);
        }
        Ok(RawQuestion { id: id.into(), text })
    }
}

/// Slot index -> replacement text.
pub type Bindings = BTreeMap<usize, String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateElement {
    Structure { text: String },
    Slot { slot: usize, ptype: PlaceholderType },
}

/// How slots are shown by [`QuestionTemplate::display_as`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlotStyle {
    /// `[person]`, `[number]`, ...
    #[default]
    Typed,
    /// `[entity]` for every slot.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub elements: Vec<TemplateElement>,
    pub placeholders: Vec<Placeholder>,
    pub source: RawQuestion,
}

impl QuestionTemplate {
    /// Tokenize, identify placeholders and build, in one step.
    pub fn from_question(
        question: &RawQuestion,
        identifier: &dyn EntityIdentifier,
    ) -> Result<Self, TemplateError> {
        let tokens = tokenize(&question.text)?;
        let (placeholders, structure) = identify_placeholders(&question.text, &tokens, identifier)?;
        build_template(&structure, &placeholders, question)
    }

    pub fn slot_count(&self) -> usize {
        self.placeholders.len()
    }

    pub fn slot_types(&self) -> Vec<PlaceholderType> {
        self.placeholders.iter().map(|p| p.ptype).collect()
    }

    pub fn original_bindings(&self) -> Bindings {
        self.placeholders.iter().enumerate().map(|(i, p)| (i, p.surface.clone())).collect()
    }

    /// Renders with `bindings[i]` for slot `i`.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        render(self, bindings)
    }

    pub fn render_with(&self, values: &[&str]) -> Result<String, TemplateError> {
        let bindings = values.iter().enumerate().map(|(i, v)| (i, v.to_string())).collect();
        render(self, &bindings)
    }

    pub fn display(&self) -> String {
        self.display_as(SlotStyle::Typed)
    }

    pub fn display_as(&self, style: SlotStyle) -> String {
        let mut out = String::new();
        for el in &self.elements {
            match el {
                TemplateElement::Structure { text } => out.push_str(text),
                TemplateElement::Slot { ptype, .. } => match style {
                    SlotStyle::Typed => {
                        let _ = write!(out, "[{ptype}]");
                    }
                    SlotStyle::Generic => out.push_str("[entity]"),
                },
            }
        }
        out
    }

    /// Stable digest of the template's shape (structure text and slot types),
    /// independent of the placeholder surfaces. Questions with the same
    /// structure share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for el in &self.elements {
            match el {
                TemplateElement::Structure { text } => {
                    hasher.update(b"S");
                    hasher.update((text.len() as u64).to_le_bytes());
                    hasher.update(text.as_bytes());
                }
                TemplateElement::Slot { slot, ptype } => {
                    hasher.update(b"P");
                    hasher.update((*slot as u64).to_le_bytes());
                    hasher.update(ptype.name().as_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    /// JSON debug dump with elements, placeholders and token offsets.
    pub fn debug_dump(&self) -> serde_json::Value {
        let tokens = tokenize(&self.source.text).unwrap_or_default();
        serde_json::json!({
            "source": self.source,
            "display": self.display(),
            "elements": self.elements,
            "placeholders": self.placeholders,
            "tokens": tokens,
        })
    }
}

/// Merges the structure tokens and placeholders (which must partition the
/// tokens of `source`) into a template. Structure text keeps the original
/// inter-token whitespace, so rendering with the original surfaces is exact.
pub fn build_template(
    structure: &[QToken],
    placeholders: &[Placeholder],
    source: &RawQuestion,
) -> Result<QuestionTemplate, TemplateError> {
    let text = &source.text;
    let mut sorted = placeholders.to_vec();
    sorted.sort_by_key(|p| p.byte_start);

    let n_tokens = structure.len() + sorted.iter().map(|p| p.token_span.last - p.token_span.first + 1).sum::<usize>();
    identify::check_spans(&sorted, n_tokens)?;

    for p in &sorted {
        if p.byte_end > text.len() || p.byte_start >= p.byte_end || text.get(p.byte_start..p.byte_end) != Some(p.surface.as_str()) {
            return Err(TemplateError::MalformedPartition(format!(
                "placeholder {:?} does not match the source at {}..{}",
                p.surface, p.byte_start, p.byte_end
            )));
        }
        if let Some(t) = structure.iter().find(|t| t.byte_start < p.byte_end && p.byte_start < t.byte_end) {
            return Err(TemplateError::MalformedPartition(format!(
                "structure token {:?} overlaps placeholder {:?}",
                t.surface, p.surface
            )));
        }
    }

    let mut elements = Vec::with_capacity(2 * sorted.len() + 1);
    let mut cursor = 0;
    for (slot, p) in sorted.iter().enumerate() {
        if p.byte_start > cursor {
            elements.push(TemplateElement::Structure { text: text[cursor..p.byte_start].to_string() });
        }
        elements.push(TemplateElement::Slot { slot, ptype: p.ptype });
        cursor = p.byte_end;
    }
    if cursor < text.len() {
        elements.push(TemplateElement::Structure { text: text[cursor..].to_string() });
    }

    Ok(QuestionTemplate { elements, placeholders: sorted, source: source.clone() })
}

/// Splices bindings into the template's slots.
pub fn render(template: &QuestionTemplate, bindings: &Bindings) -> Result<String, TemplateError> {
    let missing: Vec<usize> =
        (0..template.slot_count()).filter(|i| !bindings.contains_key(i)).collect();
    if !missing.is_empty() {
        return Err(TemplateError::IncompleteBindings(missing));
    }
    let mut out = String::with_capacity(template.source.text.len());
    for el in &template.elements {
        match el {
            TemplateElement::Structure { text } => out.push_str(text),
            TemplateElement::Slot { slot, .. } => out.push_str(&bindings[slot]),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bill_gates() -> QuestionTemplate {
        let q = RawQuestion::new("q", "What is Bill Gates known for?").unwrap();
        let id = RuleBasedIdentifier::new(Gazetteer::new().with("Bill Gates", PlaceholderType::Person));
        QuestionTemplate::from_question(&q, &id).unwrap()
    }

    #[test]
    fn bill_gates_template() {
        let t = bill_gates();
        assert_eq!(t.display_as(SlotStyle::Generic), "What is [entity] known for?");
        assert_eq!(t.display(), "What is [person] known for?");
        assert_eq!(t.slot_types(), [PlaceholderType::Person]);
        assert_eq!(t.render(&t.original_bindings()).unwrap(), t.source.text);
    }

    #[test]
    fn zero_slot_template_renders_source() {
        let q = RawQuestion::new("q", "why is the sky blue?").unwrap();
        let t = QuestionTemplate::from_question(&q, &RuleBasedIdentifier::default()).unwrap();
        assert_eq!(t.slot_count(), 0);
        assert_eq!(t.display(), q.text);
        assert_eq!(t.render(&Bindings::new()).unwrap(), q.text);
    }

    #[test]
    fn slot_order_follows_text_order() {
        let text = "Did Marie Curie win in 1903 or 1911?";
        let q = RawQuestion::new("q", text).unwrap();
        let tokens = tokenize(text).unwrap();
        let (mut p, qs) = identify_placeholders(text, &tokens, &RuleBasedIdentifier::default()).unwrap();
        // Feed placeholders out of order; the template must re-sort them.
        p.reverse();
        let t = build_template(&qs, &p, &q).unwrap();
        let mut oracle: Vec<_> = p.iter().map(|p| (p.byte_start, p.surface.clone())).collect();
        oracle.sort();
        let got: Vec<_> = t.placeholders.iter().map(|p| (p.byte_start, p.surface.clone())).collect();
        assert_eq!(got, oracle);
        assert_eq!(t.display(), "Did [other] win in [number] or [number]?");
    }

    #[test]
    fn render_splices_binding() {
        let t = bill_gates();
        let out = t.render_with(&["Marie Curie"]).unwrap();
        // string-splice oracle
        let src = &t.source.text;
        let p = &t.placeholders[0];
        let expected = format!("{}{}{}", &src[..p.byte_start], "Marie Curie", &src[p.byte_end..]);
        assert_eq!(out, expected);
        assert_eq!(out, "What is Marie Curie known for?");
    }

    #[test]
    fn missing_binding_is_an_error() {
        let t = bill_gates();
        assert!(matches!(t.render(&Bindings::new()), Err(TemplateError::IncompleteBindings(v)) if v == [0]));
    }

    #[test]
    fn overlapping_partition_is_rejected() {
        let t = bill_gates();
        let tokens = tokenize(&t.source.text).unwrap();
        // "Bill" appears both as structure and inside the placeholder.
        let err = build_template(&tokens, &t.placeholders, &t.source).unwrap_err();
        assert!(matches!(err, TemplateError::MalformedPartition(_)));
    }

    #[test]
    fn fingerprint_ignores_surfaces() {
        let a = bill_gates();
        let q = RawQuestion::new("q2", "What is Ada Lovelace known for?").unwrap();
        let id = RuleBasedIdentifier::new(Gazetteer::new().with("Ada Lovelace", PlaceholderType::Person));
        let b = QuestionTemplate::from_question(&q, &id).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let q = RawQuestion::new("q3", "What is Ada Lovelace famous for?").unwrap();
        let c = QuestionTemplate::from_question(&q, &id).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn debug_dump_has_offsets() {
        let dump = bill_gates().debug_dump();
        assert_eq!(dump["placeholders"][0]["byte_start"], 8);
        assert_eq!(dump["placeholders"][0]["byte_end"], 18);
        assert_eq!(dump["elements"][1]["kind"], "slot");
        assert_eq!(dump["tokens"].as_array().unwrap().len(), 7);
    }

    fn question_text() -> impl Strategy<Value = String> {
        let word = prop_oneof![
            "[a-z]{1,8}",
            "[A-Z][a-z]{1,8}",
            "[0-9]{1,4}",
            "[0-9]{1,2}\\.[0-9]{1,2}",
            "[,;:?!'\"()-]",
            "[àéüßΩ]{1,3}",
        ];
        let sep = prop_oneof![Just(" "), Just("  "), Just(""), Just("\t"), Just("\n")];
        proptest::collection::vec((word, sep), 1..14).prop_map(|parts| {
            let mut s: String = parts.into_iter().map(|(w, s)| format!("{w}{s}")).collect();
            if s.trim().is_empty() {
                s.push('x');
            }
            s
        })
    }

    proptest! {
        #[test]
        fn tokens_tile_the_text(text in question_text()) {
            let toks = tokenize(&text).unwrap();
            let mut prev_end = 0;
            for t in &toks {
                prop_assert!(t.byte_start < t.byte_end);
                prop_assert!(t.byte_start >= prev_end);
                prop_assert!(text[prev_end..t.byte_start].chars().all(char::is_whitespace));
                prop_assert_eq!(&text[t.range()], t.surface.as_str());
                prev_end = t.byte_end;
            }
            prop_assert!(text[prev_end..].chars().all(char::is_whitespace));
        }

        #[test]
        fn partition_and_round_trip(text in question_text()) {
            let q = RawQuestion::new("p", text.clone()).unwrap();
            let tokens = tokenize(&text).unwrap();
            let (p, qs) = identify_placeholders(&text, &tokens, &RuleBasedIdentifier::default()).unwrap();
            let covered: usize = p.iter().map(|p| p.token_span.last - p.token_span.first + 1).sum();
            prop_assert_eq!(covered + qs.len(), tokens.len());
            let t = build_template(&qs, &p, &q).unwrap();
            prop_assert_eq!(t.render(&t.original_bindings()).unwrap(), text);
        }

        #[test]
        fn rerender_keeps_structure(text in question_text(), fill in "[a-z]{1,6}( [a-z]{1,6})?") {
            let q = RawQuestion::new("p", text).unwrap();
            let t = QuestionTemplate::from_question(&q, &RuleBasedIdentifier::default()).unwrap();
            let bindings: Bindings = (0..t.slot_count()).map(|i| (i, fill.clone())).collect();
            let rendered = t.render(&bindings).unwrap();
            let structure: Vec<String> = t.elements.iter().filter_map(|e| match e {
                TemplateElement::Structure { text } => Some(text.clone()),
                _ => None,
            }).collect();
            let fill_tokens = tokenize(&fill).unwrap().len();
            // Re-tokenizing the rendered text yields the structure tokens plus
            // exactly the tokens of each binding.
            let structure_tokens: usize = structure.iter().map(|s| scan(s).len()).sum();
            prop_assert_eq!(tokenize(&rendered).unwrap().len(), structure_tokens + fill_tokens * t.slot_count());
            let mut cursor = 0;
            for s in &structure {
                let at = rendered[cursor..].find(s.as_str());
                prop_assert!(at.is_some());
                cursor += at.unwrap() + s.len();
            }
        }

        #[test]
        fn rule_based_is_deterministic(text in question_text()) {
            let tokens = tokenize(&text).unwrap();
            let id = RuleBasedIdentifier::default();
            let a = id.identify(&text, &tokens).unwrap();
            let b = std::thread::scope(|s| s.spawn(|| id.identify(&text, &tokens).unwrap()).join().unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
