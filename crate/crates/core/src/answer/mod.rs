//! Answering with a selected demo's reasoning path, and the end-to-end run.
//!
//! [`answer`] pulls the chosen demo from the pool, extracts the parts of
//! the real document each path step needs, and sends one prompt carrying
//! the question, that focused text, the demo's steps and its skills.
//! [`run_frem`] chains every stage from template building to the answer.

mod focus;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, GatewayError, Purpose};
use crate::skills::ReasoningSkill;
use crate::synthesis::{DemoPool, ReasoningPath};
use crate::template::RawQuestion;

pub use focus::{extract_focus, split_sentences, FocusDocument, FocusMode, FocusSegment};
pub use pipeline::{run_frem, FremContext, FremOutcome, PipelineError, PoolCache, RunManifest, Stage, StageFailure};

#[derive(Debug, thiserror::Error)]
pub enum AnswerError {
    #[error("document is empty")]
    InvalidDocument,
    #[error("no focus text could be extracted")]
    FocusEmpty,
    #[error("model returned an empty answer")]
    EmptyAnswer,
    #[error("demo {0} is not in the pool")]
    UnknownDemo(String),
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Exact messages sent for the final answer and the raw reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub question_id: String,
    pub answer: String,
    pub demo_id: String,
    pub path: ReasoningPath,
    pub focus: FocusDocument,
    /// Set when extraction found nothing and the full document was used.
    pub focus_fell_back: bool,
    pub transcript: Transcript,
}

const ANSWER_INSTRUCTIONS: &str = "You are given:
- The original question: [Q]
- A document or context: [D]
- A selected reasoning path: [R]
- The specific skills used in the reasoning path: [S]
Your goal is to produce a final answer by combining the relevant information from [D] with the guided reasoning steps from [R]. Follow these instructions:
1. Review the Reasoning Path
Read each step in [R] carefully. Identify which parts of [D] or background knowledge support each step.
2. Apply the Skills
If [S] includes certain reasoning skills (e.g., comparison, bridging, enumeration), make sure to explicitly use them when combining evidence from [D].
3. Generate a Clear Answer
Compose a concise final answer that directly addresses [Q]. You may outline your chain of thought, but keep the explanation aligned with [R].
4. Maintain Accuracy
If [R] instructs a specific substep (e.g., numerical calculation or bridging multiple facts), follow it precisely, citing the relevant parts of [D].
Example:
Question: \"Which animal is known as the King of the Jungle?\"
Document: \"...the lion is often called 'King of the Jungle' due to...\"
Reasoning Path:
- Step 1: Identify key subject \"King of the Jungle\"
- Step 2: Confirm which animal is described by that phrase
- Step 3: Conclude final answer
Answer: \"The animal known as the King of the Jungle is the lion.\"
Notes:
- Do not contradict the provided reasoning path.
- Cite relevant text from [D] if needed, but avoid unnecessary repetition.
- End with a concise, standalone final answer.";

/// The answering prompt: fixed instructions, then the [Q], [D], [R] and [S]
/// sections. [S] lists each distinct skill of the path once.
pub fn answer_prompt(question: &str, focus_text: &str, steps: &[String], path: &ReasoningPath) -> String {
    let mut p = String::from(ANSWER_INSTRUCTIONS);
    p.push_str("\n\n[Q]\n");
    p.push_str(question);
    p.push_str("\n\n[D]\n");
    p.push_str(focus_text);
    p.push_str("\n\n[R]\n");
    for (i, step) in steps.iter().enumerate() {
        p.push_str(&format!("{}. {step}\n", i + 1));
    }
    p.push_str("\n[S]\n");
    let names: Vec<&str> = path.distinct().into_iter().map(ReasoningSkill::name).collect();
    p.push_str(&names.join(", "));
    p.push_str("\n\nAnswer:");
    p
}

/// Text after the last "Answer:" label, or the whole reply without one,
/// with surrounding quotes and emphasis removed.
pub fn parse_answer(reply: &str) -> Option<String> {
    let lower = reply.to_ascii_lowercase();
    let body = match lower.rfind("answer:") {
        Some(at) => &reply[at + "answer:".len()..],
        None => reply,
    };
    let cleaned = body.trim().trim_matches(['*', ' ']).trim().trim_matches('"').trim();
    (!cleaned.is_empty()).then(|| cleaned.to_string())
}

/// Answers `question` over `document` guided by demo `demo_id`. When focus
/// extraction finds nothing, the full document is used and the result is
/// flagged.
pub fn answer(
    question: &RawQuestion,
    document: &str,
    demo_id: &str,
    pool: &DemoPool,
    gateway: &Gateway,
    mode: FocusMode,
) -> Result<AnswerResult, AnswerError> {
    let demo = pool.get(demo_id).ok_or_else(|| AnswerError::UnknownDemo(demo_id.to_string()))?;
    let (focus, focus_fell_back) = match extract_focus(document, &demo.path, question, Some(gateway), mode) {
        Ok(f) => (f, false),
        Err(AnswerError::FocusEmpty) => {
            log::info!("{}: no focus text found; using the full document", question.id);
            (FocusDocument::full(document), true)
        }
        Err(e) => return Err(e),
    };
    let messages = vec![ChatMessage::user(answer_prompt(&question.text, &focus.text(), &demo.steps, &demo.path))];
    let response = gateway.ask(Purpose::Answer, 0, messages.clone())?;
    let text = parse_answer(&response).ok_or(AnswerError::EmptyAnswer)?;
    Ok(AnswerResult {
        question_id: question.id.clone(),
        answer: text,
        demo_id: demo.demo_id.clone(),
        path: demo.path.clone(),
        focus,
        focus_fell_back,
        transcript: Transcript { messages, response },
    })
}
