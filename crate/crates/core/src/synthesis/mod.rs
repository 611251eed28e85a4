//! Synthetic demo pool: slot filling, reasoning paths, generation and
//! persistence.
//!
//! A pool is built for one question template. Every demo asks a question
//! rendered from that template with different slot bindings, so all demos
//! share the source question's structure while their reasoning paths vary.

mod bindings;
mod path;
mod pool;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, GatewayError, Purpose};
use crate::template::{Bindings, PlaceholderType, QuestionTemplate, TemplateError};

pub use bindings::{propose_bindings, propose_variants, FillStrategy, TermBank};
pub use path::{sample_path, PathConfig, ReasoningPath};
pub use pool::{build_pool, load_pool, save_pool, BuildStats, PoolConfig, POOL_SCHEMA_VERSION};
pub use prompt::{echoed_path, parse_synthesis, synthesis_prompt, ParsedSynthesis};

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("no candidate terms for {0} slots")]
    NoCandidates(PlaceholderType),
    #[error("could not parse synthesis response: {0}")]
    ParseFailure(String),
    #[error("no demo survived {attempts} synthesis attempts")]
    PoolEmpty { attempts: usize },
    #[error("unsupported pool schema version {found} (expected {expected})")]
    UnsupportedPoolVersion { found: u64, expected: u64 },
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("pool decode: {0}")]
    Decode(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One synthetic (document, question, answer, path) demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDemo {
    pub demo_id: String,
    pub d_ref: String,
    /// Always the template rendered with `bindings`, whatever the model wrote.
    pub q_syn: String,
    pub a_syn: String,
    pub path: ReasoningPath,
    /// Reasoning steps as written by the model.
    pub steps: Vec<String>,
    pub bindings: Bindings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_score: Option<u8>,
    pub transcript: String,
    /// Paraphrased stem shown to the model, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPool {
    pub source_template: QuestionTemplate,
    pub demos: Vec<SyntheticDemo>,
    #[serde(default)]
    pub stats: BuildStats,
}

impl DemoPool {
    /// Pool size M.
    pub fn size(&self) -> usize {
        self.demos.len()
    }

    /// A pool needs at least one demo to select from.
    pub fn is_usable(&self) -> bool {
        !self.demos.is_empty()
    }

    pub fn get(&self, demo_id: &str) -> Option<&SyntheticDemo> {
        self.demos.iter().find(|d| d.demo_id == demo_id)
    }
}

/// Per-attempt knobs beyond the template, bindings and path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoSpec {
    pub demo_id: String,
    /// Position of this attempt; forwarded as the request ordinal.
    pub ordinal: u32,
    pub variant: Option<String>,
    /// Longest echoed path accepted in place of the requested one.
    pub max_path_len: usize,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec { demo_id: demo_id(0), ordinal: 0, variant: None, max_path_len: PathConfig::default().max_len }
    }
}

pub fn demo_id(index: usize) -> String {
    format!("demo-{index:06}")
}

/// Generates one demo with default attempt settings.
pub fn synthesize_demo(
    template: &QuestionTemplate,
    bindings: &Bindings,
    path: &ReasoningPath,
    gateway: &Gateway,
) -> Result<SyntheticDemo, SynthesisError> {
    synthesize_with(template, bindings, path, gateway, &DemoSpec::default())
}

/// Generates one demo. The stored path is the one the model reports having
/// followed when it names only taxonomy skills and fits `max_path_len`;
/// otherwise the requested path.
pub fn synthesize_with(
    template: &QuestionTemplate,
    bindings: &Bindings,
    path: &ReasoningPath,
    gateway: &Gateway,
    spec: &DemoSpec,
) -> Result<SyntheticDemo, SynthesisError> {
    let q_syn = template.render(bindings)?;
    let prompt = synthesis_prompt(&q_syn, path, spec.variant.as_deref());
    let transcript = gateway.ask(Purpose::Synthesis, spec.ordinal, vec![ChatMessage::user(prompt)])?;
    let parsed = parse_synthesis(&transcript)?;
    if let Some(q) = &parsed.question {
        if q != &q_syn {
            log::debug!("{}: model rephrased the question as {q:?}; keeping the rendered form", spec.demo_id);
        }
    }
    let path = match echoed_path(&parsed) {
        Some(echo) if echo.len() <= spec.max_path_len => echo,
        _ => path.clone(),
    };
    Ok(SyntheticDemo {
        demo_id: spec.demo_id.clone(),
        d_ref: parsed.document,
        q_syn,
        a_syn: parsed.answer,
        path,
        steps: parsed.steps,
        bindings: bindings.clone(),
        judge_score: None,
        transcript,
        variant: spec.variant.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::skills::ReasoningSkill;
    use crate::template::{Gazetteer, RawQuestion, RuleBasedIdentifier};
    use std::sync::Arc;

    const JAPAN: &str = "Reference Document: Tokyo is the capital of Japan.\n\
        Step-by-step Reasoning Path:\n\
        1. Identify the key entity: \"capital\" and \"Japan\"\n\
        2. Recognize that the capital of a country is the primary city where the government is located\n\
        3. Recall that Tokyo is the capital city of Japan.\n\
        Generated Answer: \"The capital of Japan is Tokyo.\"\n\
        Reasoning Skill Used: Geographical knowledge of countries and capitals.";

    fn template() -> QuestionTemplate {
        let q = RawQuestion::new("q", "What is the capital of Japan?").unwrap();
        let id = RuleBasedIdentifier::new(Gazetteer::new().with("Japan", PlaceholderType::Location));
        QuestionTemplate::from_question(&q, &id).unwrap()
    }

    #[test]
    fn japan_example_answer() {
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Synthesis, JAPAN)));
        let t = template();
        let path = ReasoningPath::new(vec![ReasoningSkill::Deductive]).unwrap();
        let demo = synthesize_demo(&t, &t.original_bindings(), &path, &gw).unwrap();
        assert_eq!(demo.a_syn, "The capital of Japan is Tokyo.");
        assert_eq!(demo.d_ref, "Tokyo is the capital of Japan.");
        assert_eq!(demo.steps.len(), 3);
        assert_eq!(demo.path, path);
        assert_eq!(demo.transcript, JAPAN);
    }

    #[test]
    fn rendered_question_wins_over_rephrasing() {
        let text = "Input Question: \"Which city is the capital of France?\"\n\
                    Step-by-step Reasoning Path:\n1. Recall it.\nGenerated Answer: Paris";
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Synthesis, text)));
        let t = template();
        let b: Bindings = [(0, "France".to_string())].into();
        let path = ReasoningPath::new(vec![ReasoningSkill::Deductive]).unwrap();
        let demo = synthesize_demo(&t, &b, &path, &gw).unwrap();
        assert_eq!(demo.q_syn, "What is the capital of France?");
        assert!(demo.transcript.contains("Which city"));
    }

    #[test]
    fn missing_answer_is_parse_failure() {
        let text = JAPAN.replace("Generated Answer: \"The capital of Japan is Tokyo.\"\n", "");
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Synthesis, text)));
        let t = template();
        let path = ReasoningPath::new(vec![ReasoningSkill::Deductive]).unwrap();
        let err = synthesize_demo(&t, &t.original_bindings(), &path, &gw).unwrap_err();
        assert!(matches!(err, SynthesisError::ParseFailure(_)));
    }

    #[test]
    fn overlong_echo_is_ignored() {
        let text = "Step-by-step Reasoning Path:\n1. a\nGenerated Answer: x\n\
                    Reasoning Skill Used: Deductive, Inductive, Abductive";
        let gw = Gateway::new(Arc::new(MockBackend::new().with_tag(Purpose::Synthesis, text)));
        let t = template();
        let path = ReasoningPath::new(vec![ReasoningSkill::Analogical]).unwrap();
        let spec = DemoSpec { max_path_len: 2, ..Default::default() };
        let demo = synthesize_with(&t, &t.original_bindings(), &path, &gw, &spec).unwrap();
        assert_eq!(demo.path, path);
        let demo = synthesize_demo(&t, &t.original_bindings(), &path, &gw).unwrap();
        assert_eq!(demo.path.len(), 3);
    }
}
