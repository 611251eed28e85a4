//! Synthesis prompt and the labeled-section parser for its responses.

use super::{ReasoningPath, SynthesisError};
use crate::skills::{parse_skill, ReasoningSkill};

const SYNTHESIS_INSTRUCTIONS: &str = r#"You are a language model that generates synthetic question-answer (QA) pairs with reasoning paths.
Your task is to generate a QA pair based on the following question. Additionally, you should
provide a clear, step-by-step reasoning path that corresponds to a predefined reasoning skill.
Your reasoning path should include clear substeps for each step of the thought process.
Example 1:
Input Question: "Who invented the telephone?"
Step-by-step Reasoning Path:
1. Identify the key entity: "telephone"
2. Identify that the question is asking for the inventor of a significant historical device
3. Recall the historical context of the invention of the telephone.
4. The inventor is Alexander Graham Bell.
Generated Answer: "Alexander Graham Bell invented the telephone in 1876."
Reasoning Skill Used: Historical knowledge of inventions.
Example 2:
Input Question: "What is the capital of Japan?"
Step-by-step Reasoning Path:
1. Identify the key entity: "capital" and "Japan"
2. Recognize that the capital of a country is the primary city where the government is located
3. Recall that Tokyo is the capital city of Japan.
Generated Answer: "The capital of Japan is Tokyo."
Reasoning Skill Used: Geographical knowledge of countries and capitals.
Example 3:
Input Question: "What is the chemical formula for water?"
Step-by-step Reasoning Path:
1. Identify the key term: "chemical formula" and "water"
2. Recognize that water is a chemical compound made of hydrogen and oxygen.
3. Recall the chemical composition: two hydrogen atoms and one oxygen atom.
Generated Answer: "The chemical formula for water is H2O."
Reasoning Skill Used: Basic chemical knowledge and scientific reasoning.
Notes:
Please make sure that the reasoning path is clear and includes each substep in the thought process.
The output should follow this structure: "Step-by-step reasoning," followed by the conclusion.
Each reasoning skill corresponds to a specific domain of knowledge."#;

/// Builds the synthesis prompt for one demo. Each distinct skill of `path`
/// contributes its description block once; the ordered path is listed
/// separately.
pub fn synthesis_prompt(question: &str, path: &ReasoningPath, variant: Option<&str>) -> String {
    let mut p = String::with_capacity(4096);
    p.push_str(SYNTHESIS_INSTRUCTIONS);
    p.push_str("\n\nReasoning skills for this QA pair:\n");
    for skill in path.distinct() {
        p.push('\n');
        p.push_str(&skill.prompt_block());
    }
    p.push_str(&format!("\nRequired reasoning path, in order: {path}\n"));
    p.push_str(&format!("\nInput Question: \"{question}\"\n"));
    if let Some(v) = variant {
        p.push_str(&format!("Alternative phrasing of the question stem: \"{v}\"\n"));
    }
    p.push_str(
        "\nFirst write a short reference document containing the facts needed to answer the \
         question by following the reasoning path. Respond with exactly these labeled sections:\n\
         Reference Document: <document>\n\
         Step-by-step Reasoning Path:\n\
         1. <step>\n\
         Generated Answer: \"<answer>\"\n\
         Reasoning Skill Used: <skill names of the path, in order, comma-separated>",
    );
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Document,
    Question,
    Steps,
    Answer,
    Skills,
}

const LABELS: &[(&str, Section)] = &[
    ("reference document", Section::Document),
    ("document", Section::Document),
    ("input question", Section::Question),
    ("generated question", Section::Question),
    ("synthetic question", Section::Question),
    ("step-by-step reasoning path", Section::Steps),
    ("step-by-step reasoning", Section::Steps),
    ("reasoning path", Section::Steps),
    ("generated answer", Section::Answer),
    ("answer", Section::Answer),
    ("reasoning skills used", Section::Skills),
    ("reasoning skill used", Section::Skills),
];

/// Matches a line like `**Generated Answer:** "..."` against the labels,
/// returning the section and the remainder after the colon.
fn match_label(line: &str) -> Option<(Section, &str)> {
    let trimmed = line.trim().trim_start_matches(['*', '#', ' ']);
    let colon = trimmed.find(':')?;
    let label = trimmed[..colon].trim().trim_end_matches('*').trim().to_lowercase();
    let rest = trimmed[colon + 1..].trim_start_matches('*').trim();
    LABELS.iter().find(|(l, _)| *l == label).map(|(_, s)| (*s, rest))
}

fn strip_step_marker(line: &str) -> &str {
    let mut s = line.trim().trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 && s[digits..].starts_with(['.', ')', ':']) {
        s = s[digits + 1..].trim_start();
    }
    if s.get(..5).is_some_and(|p| p.eq_ignore_ascii_case("step ")) {
        if let Some(colon) = s.find(':') {
            let n = s[5..colon].trim();
            if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                s = s[colon + 1..].trim_start();
            }
        }
    }
    s.trim()
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(s);
    s.trim().to_string()
}

/// Sections recovered from a synthesis response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSynthesis {
    pub document: String,
    pub question: Option<String>,
    pub steps: Vec<String>,
    pub answer: String,
    pub skills_line: Option<String>,
}

/// Labeled-line scan. Text after a label (same line or following lines)
/// belongs to that section until the next label. Missing answer or steps is
/// a parse failure; a missing document is tolerated.
pub fn parse_synthesis(response: &str) -> Result<ParsedSynthesis, SynthesisError> {
    let mut section = Section::Preamble;
    let mut document = Vec::new();
    let mut question = Vec::new();
    let mut steps = Vec::new();
    let mut answer = Vec::new();
    let mut skills = Vec::new();

    for line in response.lines() {
        let content = match match_label(line) {
            Some((s, rest)) => {
                section = s;
                rest
            }
            None => line.trim(),
        };
        if content.is_empty() {
            continue;
        }
        match section {
            Section::Preamble => {}
            Section::Document => document.push(content),
            Section::Question => question.push(content),
            Section::Steps => {
                let step = strip_step_marker(content);
                if !step.is_empty() {
                    steps.push(step.to_string());
                }
            }
            Section::Answer => answer.push(content),
            Section::Skills => skills.push(content),
        }
    }

    let answer = unquote(&answer.join(" "));
    if answer.is_empty() {
        return Err(SynthesisError::ParseFailure("no generated answer".into()));
    }
    if steps.is_empty() {
        return Err(SynthesisError::ParseFailure("no reasoning steps".into()));
    }
    Ok(ParsedSynthesis {
        document: document.join("\n"),
        question: (!question.is_empty()).then(|| unquote(&question.join(" "))),
        steps,
        answer,
        skills_line: (!skills.is_empty()).then(|| skills.join(" ")),
    })
}

/// The path the model reports having followed: the skills line when every
/// item is a taxonomy skill, else a trailing `(Skill)` annotation on every
/// step. `None` when neither is available.
pub fn echoed_path(parsed: &ParsedSynthesis) -> Option<ReasoningPath> {
    if let Some(line) = &parsed.skills_line {
        let items: Result<Vec<ReasoningSkill>, _> = line
            .split([',', ';'])
            .flat_map(|s| s.split("->"))
            .map(|s| s.trim().trim_end_matches('.').trim())
            .filter(|s| !s.is_empty())
            .map(parse_skill)
            .collect();
        if let Ok(items) = items {
            if let Ok(path) = ReasoningPath::new(items) {
                return Some(path);
            }
        }
    }
    let annotated: Option<Vec<ReasoningSkill>> = parsed
        .steps
        .iter()
        .map(|step| {
            let s = step.trim_end().trim_end_matches('.');
            let open = s.rfind('(')?;
            s.ends_with(')').then(|| parse_skill(&s[open + 1..s.len() - 1]).ok()).flatten()
        })
        .collect();
    annotated.and_then(|v| ReasoningPath::new(v).ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_TWO: &str = r#"Input Question: "What is the capital of Japan?"
Step-by-step Reasoning Path:
1. Identify the key entity: "capital" and "Japan"
2. Recognize that the capital of a country is the primary city where the government is located
3. Recall that Tokyo is the capital city of Japan.
Generated Answer: "The capital of Japan is Tokyo."
Reasoning Skill Used: Geographical knowledge of countries and capitals."#;

    #[test]
    fn parses_worked_example_shape() {
        let p = parse_synthesis(EXAMPLE_TWO).unwrap();
        assert_eq!(p.answer, "The capital of Japan is Tokyo.");
        assert_eq!(p.steps.len(), 3);
        assert_eq!(p.steps[0], "Identify the key entity: \"capital\" and \"Japan\"");
        assert_eq!(p.question.as_deref(), Some("What is the capital of Japan?"));
        assert!(p.document.is_empty());
        // Skill line is free text, not taxonomy names.
        assert_eq!(echoed_path(&p), None);
    }

    #[test]
    fn missing_answer_fails() {
        let text = EXAMPLE_TWO.replace("Generated Answer: \"The capital of Japan is Tokyo.\"\n", "");
        assert!(matches!(parse_synthesis(&text), Err(SynthesisError::ParseFailure(_))));
    }

    #[test]
    fn missing_steps_fails() {
        let text = "Reference Document: Tokyo is big.\nGenerated Answer: Tokyo";
        assert!(matches!(parse_synthesis(text), Err(SynthesisError::ParseFailure(_))));
    }

    #[test]
    fn tolerant_of_markdown_and_step_labels() {
        let text = "**Reference Document:**\nLine one.\nLine two.\n\n**Step-by-step Reasoning Path:**\n\
                    Step 1: Identify the subject (Deductive)\n- Step 2: Extract the fact (Deductive)\n\
                    3) Conclude (Decompositional)\n**Generated Answer:** Liverpool\n";
        let p = parse_synthesis(text).unwrap();
        assert_eq!(p.document, "Line one.\nLine two.");
        assert_eq!(p.steps[0], "Identify the subject (Deductive)");
        assert_eq!(p.steps[1], "Extract the fact (Deductive)");
        assert_eq!(p.answer, "Liverpool");
        let path = echoed_path(&p).unwrap();
        assert_eq!(
            path.steps(),
            [ReasoningSkill::Deductive, ReasoningSkill::Deductive, ReasoningSkill::Decompositional]
        );
    }

    #[test]
    fn skills_line_wins() {
        let text = "Step-by-step Reasoning Path:\n1. a\n2. b\nGenerated Answer: x\nReasoning Skill Used: Cause & Effect, Analogical.";
        let p = parse_synthesis(text).unwrap();
        assert_eq!(echoed_path(&p).unwrap().steps(), [ReasoningSkill::CauseEffect, ReasoningSkill::Analogical]);
    }

    #[test]
    fn prompt_contains_each_skill_block_once() {
        let path = ReasoningPath::new(vec![ReasoningSkill::Deductive]).unwrap();
        let p = synthesis_prompt("What is Marie Curie known for?", &path, None);
        assert_eq!(p.matches(&ReasoningSkill::Deductive.prompt_block()).count(), 1);
        assert!(p.contains("Input Question: \"What is Marie Curie known for?\""));
        assert!(p.contains("Example 3:"));

        let path = ReasoningPath::new(vec![ReasoningSkill::Deductive, ReasoningSkill::Deductive]).unwrap();
        let p = synthesis_prompt("q?", &path, Some("alt?"));
        assert_eq!(p.matches(&ReasoningSkill::Deductive.prompt_block()).count(), 1);
        assert!(p.contains("Deductive -> Deductive"));
        assert!(p.contains("alt?"));
    }
}
