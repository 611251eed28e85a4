use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::gateway::{ChatMessage, Gateway, Purpose};
use crate::template::{Bindings, PlaceholderType, QuestionTemplate};

/// How replacement terms for template slots are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStrategy {
    /// Uniform draws from per-type term lists.
    RandomFill,
    /// Thematically consistent terms proposed by the model.
    GuidedFill,
    /// Guided fill plus model-written paraphrases of the question stem.
    #[default]
    TemplateVariation,
}

/// Per-type candidate terms for random fill.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermBank {
    pub terms: BTreeMap<PlaceholderType, Vec<String>>,
}

impl TermBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<S: Into<String>>(mut self, ptype: PlaceholderType, terms: impl IntoIterator<Item = S>) -> Self {
        self.terms.entry(ptype).or_default().extend(terms.into_iter().map(Into::into));
        self
    }

    /// Reads `<type>.txt` files (one term per line) from `dir`. Missing files
    /// leave that type empty.
    pub fn load_dir(dir: &Path) -> Result<Self, SynthesisError> {
        let mut bank = TermBank::new();
        for ptype in PlaceholderType::ALL {
            let path = dir.join(format!("{}.txt", ptype.name()));
            if !path.exists() {
                continue;
            }
            let terms: Vec<String> = std::fs::read_to_string(&path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect();
            bank.terms.insert(ptype, terms);
        }
        Ok(bank)
    }

    pub fn get(&self, ptype: PlaceholderType) -> &[String] {
        self.terms.get(&ptype).map_or(&[], Vec::as_slice)
    }
}

/// Proposes `count` binding maps, each covering every slot of `template`.
/// Zero-slot templates yield `count` empty maps for every strategy.
pub fn propose_bindings(
    template: &QuestionTemplate,
    count: usize,
    strategy: FillStrategy,
    terms: &TermBank,
    gateway: Option<&Gateway>,
    seed: u64,
) -> Result<Vec<Bindings>, SynthesisError> {
    if template.slot_count() == 0 {
        return Ok(vec![Bindings::new(); count]);
    }
    match strategy {
        FillStrategy::RandomFill => random_fill(template, count, terms, seed),
        FillStrategy::GuidedFill | FillStrategy::TemplateVariation => {
            let gateway = gateway.ok_or_else(|| {
                SynthesisError::InvalidConfig("guided fill needs a language-model gateway".into())
            })?;
            guided_fill(template, count, gateway)
        }
    }
}

fn random_fill(
    template: &QuestionTemplate,
    count: usize,
    terms: &TermBank,
    seed: u64,
) -> Result<Vec<Bindings>, SynthesisError> {
    for ptype in template.slot_types() {
        if terms.get(ptype).is_empty() {
            return Err(SynthesisError::NoCandidates(ptype));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            template
                .slot_types()
                .into_iter()
                .enumerate()
                .map(|(slot, ptype)| {
                    let term = terms.get(ptype).choose(&mut rng).expect("non-empty term list");
                    (slot, term.clone())
                })
                .collect()
        })
        .collect())
}

pub(crate) fn fill_prompt(template: &QuestionTemplate, slot: usize, count: usize) -> String {
    let p = &template.placeholders[slot];
    format!(
        "The question \"{}\" has a replaceable {} term: \"{}\".\n\
         List {count} different {} terms that could replace it while keeping the question \
         natural and thematically consistent. Output one term per line and nothing else.",
        template.source.text, p.ptype, p.surface, p.ptype
    )
}

/// Strips list markers (`1.`, `2)`, `-`, `*`) and quotes from a model line.
pub(crate) fn clean_list_item(line: &str) -> &str {
    let mut s = line.trim();
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0
        && s[digits..].starts_with(['.', ')', ':'])
        && s[digits + 1..].starts_with(char::is_whitespace)
    {
        s = &s[digits + 1..];
    }
    s.trim_start_matches(['-', '*', '•', ' ']).trim().trim_matches('"').trim()
}

fn guided_fill(template: &QuestionTemplate, count: usize, gateway: &Gateway) -> Result<Vec<Bindings>, SynthesisError> {
    let mut per_slot = Vec::with_capacity(template.slot_count());
    for (slot, p) in template.placeholders.iter().enumerate() {
        let reply = gateway.ask(
            Purpose::Fill,
            slot as u32,
            vec![ChatMessage::user(fill_prompt(template, slot, count))],
        )?;
        let candidates: Vec<String> =
            reply.lines().map(clean_list_item).filter(|l| !l.is_empty()).map(String::from).collect();
        if candidates.is_empty() {
            return Err(SynthesisError::NoCandidates(p.ptype));
        }
        per_slot.push(candidates);
    }
    Ok((0..count)
        .map(|i| per_slot.iter().enumerate().map(|(slot, c)| (slot, c[i % c.len()].clone())).collect())
        .collect())
}

pub(crate) fn paraphrase_prompt(template: &QuestionTemplate, count: usize) -> String {
    format!(
        "Write {count} minor paraphrases or new question stems for the question \"{}\". \
         Each must ask for the same kind of answer and need the same reasoning steps. \
         Output one question per line and nothing else.",
        template.source.text
    )
}

/// Model-written variations of the question stem, used as extra context in
/// synthesis prompts. An unusable reply yields no variants.
pub fn propose_variants(template: &QuestionTemplate, count: usize, gateway: &Gateway) -> Vec<String> {
    match gateway.ask(Purpose::Paraphrase, 0, vec![ChatMessage::user(paraphrase_prompt(template, count))]) {
        Ok(reply) => reply
            .lines()
            .map(clean_list_item)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .take(count)
            .collect(),
        Err(e) => {
            log::warn!("paraphrase request failed: {e}");
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::template::{Gazetteer, RawQuestion, RuleBasedIdentifier};
    use std::sync::Arc;

    fn template() -> QuestionTemplate {
        let q = RawQuestion::new("q", "What is Bill Gates known for?").unwrap();
        let id = RuleBasedIdentifier::new(Gazetteer::new().with("Bill Gates", PlaceholderType::Person));
        QuestionTemplate::from_question(&q, &id).unwrap()
    }

    #[test]
    fn random_fill_is_seeded() {
        let terms = TermBank::new().with(PlaceholderType::Person, ["Marie Curie", "Alan Turing"]);
        let a = propose_bindings(&template(), 6, FillStrategy::RandomFill, &terms, None, 7).unwrap();
        let b = propose_bindings(&template(), 6, FillStrategy::RandomFill, &terms, None, 7).unwrap();
        assert_eq!(a, b);
        // seeded-sampler oracle: the same generator drawing indices directly
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let list = terms.get(PlaceholderType::Person);
        let expected: Vec<String> = (0..6).map(|_| list.choose(&mut rng).unwrap().clone()).collect();
        let got: Vec<String> = a.iter().map(|b| b[&0].clone()).collect();
        assert_eq!(got, expected);
        assert!(got.iter().all(|t| list.contains(t)));
    }

    #[test]
    fn zero_slot_template_gives_empty_maps() {
        let q = RawQuestion::new("q", "why is the sky blue?").unwrap();
        let t = QuestionTemplate::from_question(&q, &RuleBasedIdentifier::default()).unwrap();
        let b = propose_bindings(&t, 3, FillStrategy::RandomFill, &TermBank::new(), None, 1).unwrap();
        assert_eq!(b, vec![Bindings::new(); 3]);
        assert_eq!(t.render(&b[0]).unwrap(), q.text);
    }

    #[test]
    fn empty_term_list_is_no_candidates() {
        let err = propose_bindings(&template(), 2, FillStrategy::RandomFill, &TermBank::new(), None, 1).unwrap_err();
        assert!(matches!(err, SynthesisError::NoCandidates(PlaceholderType::Person)));
    }

    #[test]
    fn guided_fill_uses_model_terms() {
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Fill, "1. Ada Lovelace\n2. \"Grace Hopper\"")));
        let b = propose_bindings(&template(), 3, FillStrategy::GuidedFill, &TermBank::new(), Some(&gw), 0).unwrap();
        let got: Vec<_> = b.iter().map(|m| m[&0].as_str()).collect();
        assert_eq!(got, ["Ada Lovelace", "Grace Hopper", "Ada Lovelace"]);
    }

    #[test]
    fn variants_parse_list() {
        let gw = Gateway::new(Arc::new(
            MockBackend::new().with_tag(Purpose::Paraphrase, "- What is Bill Gates famous for?\n\n- Why is Bill Gates well known?"),
        ));
        assert_eq!(
            propose_variants(&template(), 5, &gw),
            ["What is Bill Gates famous for?", "Why is Bill Gates well known?"]
        );
        let silent = Gateway::new(Arc::new(MockBackend::new()));
        assert!(propose_variants(&template(), 5, &silent).is_empty());
    }

    #[test]
    fn list_item_cleanup() {
        assert_eq!(clean_list_item("  12. Alan Turing "), "Alan Turing");
        assert_eq!(clean_list_item("3) \"Paris\""), "Paris");
        assert_eq!(clean_list_item("* Rome"), "Rome");
        assert_eq!(clean_list_item("1998"), "1998");
        assert_eq!(clean_list_item("3.14"), "3.14");
    }

    #[test]
    fn term_bank_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("person.txt"), "Marie Curie\n\n# skip\nAlan Turing\n").unwrap();
        let bank = TermBank::load_dir(dir.path()).unwrap();
        assert_eq!(bank.get(PlaceholderType::Person), ["Marie Curie", "Alan Turing"]);
        assert!(bank.get(PlaceholderType::Location).is_empty());
    }
}
