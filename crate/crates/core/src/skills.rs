//! The closed set of seven reasoning skills, their prompt blocks, and the
//! estimator for the skills a question is likely to need.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, Purpose};
use crate::template::RawQuestion;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SkillError {
    #[error("unknown reasoning skill {0:?}")]
    UnknownSkill(String),
    #[error("required skill set must not be empty")]
    EmptyRequiredSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReasoningSkill {
    Deductive,
    Inductive,
    Abductive,
    CauseEffect,
    Analogical,
    CriticalThinking,
    Decompositional,
}

/// Worked (document, question, answer) triple illustrating a skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SkillExample {
    pub document: &'static str,
    pub question: &'static str,
    pub answer: &'static str,
}

impl ReasoningSkill {
    pub const ALL: [ReasoningSkill; 7] = [
        ReasoningSkill::Deductive,
        ReasoningSkill::Inductive,
        ReasoningSkill::Abductive,
        ReasoningSkill::CauseEffect,
        ReasoningSkill::Analogical,
        ReasoningSkill::CriticalThinking,
        ReasoningSkill::Decompositional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReasoningSkill::Deductive => "Deductive",
            ReasoningSkill::Inductive => "Inductive",
            ReasoningSkill::Abductive => "Abductive",
            ReasoningSkill::CauseEffect => "Cause & Effect",
            ReasoningSkill::Analogical => "Analogical",
            ReasoningSkill::CriticalThinking => "Critical Thinking",
            ReasoningSkill::Decompositional => "Decompositional",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ReasoningSkill::Deductive => "Deductive reasoning occurs when generalized statements apply to specific cases. These generalized statements are established and already proven, making specific cases easy to deduce. For example, all humans are mortals. Bill is a human, so Bill must be mortal. In this example the generalized, but proven, statement, \"all humans are mortals\" is what drives the reasoning.",
            ReasoningSkill::Inductive => "Inductive reasoning is similar to deductive reasoning in that they both draw a conclusion based on a statement. However, in inductive reasoning, the statement is likely but has not been proven. For example, roses usually bloom in spring. In spring, one can count on there being roses. Again, the difference is that this is likely but not proven to be 100%.",
            ReasoningSkill::Abductive => "Abductive reasoning is the act of making a conclusion based on what you already know. For example, if you see a plate of food still hot, but half-eaten, you can make the conclusion that the person eating that food is probably returning soon.",
            ReasoningSkill::CauseEffect => "Cause and effect reasoning is that if x happens then y will happen as a result. This is extremely persuasive when making a speech or trying to get someone to take action to cause an effect. For example, a politician may say that if they are elected, then poverty will decrease. This is using cause and effect reasoning in a real-world situation.",
            ReasoningSkill::Analogical => "Analogical reasoning is the use of a comparison between two things to persuade that there must be more in common if they already share something. For example, if x, y, and z all share this trait, then they must also share other traits. The foundation of this type of reasoning is perfect for speeches and comparisons in the real world. If there are connections between x and y already, then they must have several other things in common as well.",
            ReasoningSkill::CriticalThinking => "Critical thinking occurs when you take all of the facts and develop a conclusion based on an analysis. This could happen subconsciously or intentionally, depending on the situation. For example, in the real world, critical thinking could be about your relationships. You could see a behavior you don't like about someone and have to think critically about whether or not you will choose to spend more time with this person. This is using critical thinking to develop reasoning in a real-world application.",
            ReasoningSkill::Decompositional => "Decompositional reasoning happens when the different parts of the reasoning are broken down into smaller pieces and analyzed for how they contribute to the whole. The intent of this is to make the reasoning easier to understand and allow for analyzing how the parts equal the whole. For example, in order to understand the function of the human body, you would have to analyze each bone and organ to see how they all work together. Additionally, in the real world, an argument could be broken down into several smaller parts in order to analyze the effectiveness of the argument as a whole.",
        }
    }

    pub fn example(self) -> SkillExample {
        match self {
            ReasoningSkill::Deductive => SkillExample {
                document: "All shapes with three sides are triangles. A certain figure here has exactly three sides.",
                question: "What is this figure called?",
                answer: "It is a triangle. All shapes with three sides are triangles, and this figure has three sides. So it must be a triangle.",
            },
            ReasoningSkill::Inductive => SkillExample {
                document: "Every spring for the past ten years, wild roses in Green Valley have bloomed in late March. This spring is about to begin in Green Valley.",
                question: "Will the wild roses bloom in late March this year?",
                answer: "It is likely they will bloom in late March, because they usually do, but it is not guaranteed.",
            },
            ReasoningSkill::Abductive => SkillExample {
                document: "You notice a half-eaten sandwich and a still-hot cup of coffee on a café table. The seat feels warm, and a jacket is draped over the chair.",
                question: "Has the person who was sitting here left permanently, or are they coming back soon?",
                answer: "It is likely they just stepped away for a moment and will return, because the food and drink are still warm and their jacket remains on the chair.",
            },
            ReasoningSkill::CauseEffect => SkillExample {
                document: "Meteorologists predict heavy rain this evening, with warnings that streets may flood if the rainfall continues.",
                question: "Will the roads become dangerous as a result of this weather?",
                answer: "Yes. If heavy rain continues, roads will likely flood and become slippery, causing drivers to have less control of their vehicles.",
            },
            ReasoningSkill::Analogical => SkillExample {
                document: "Many leading technology companies emphasize continuous learning and adaptability. For instance, Google, Microsoft, and Amazon all invest in regular training programs and encourage innovation among employees. Their similar approach to fostering a culture of growth has been linked to their strong performance in rapidly changing markets.",
                question: "Can we infer that a company that promotes continuous learning will also likely be successful in adapting to market changes?",
                answer: "Yes. Since Google, Microsoft, and Amazon all share a culture of continuous learning and, as a result, demonstrate high adaptability and market success, it is reasonable to conclude by analogy that a company which also promotes continuous learning is likely to develop similar strengths.",
            },
            ReasoningSkill::CriticalThinking => SkillExample {
                document: "Over the past few months, Sam has repeatedly cancelled plans at the last minute and rarely communicated afterward.",
                question: "Should you invest time in a close friendship with Sam?",
                answer: "No. Sam's consistent behavior of last-minute cancellations suggests a pattern of unreliability, which may negatively affect the trust needed in a close friendship.",
            },
            ReasoningSkill::Decompositional => SkillExample {
                document: "A smartphone's quality can be understood by breaking it down into three parts: its design, performance, and battery life. The design covers the build and user interface; performance looks at processing speed and software efficiency; battery life shows how long the device operates on a single charge.",
                question: "Can we conclude that the smartphone provides a good overall user experience?",
                answer: "Yes. If the design is appealing, the performance is robust, and the battery life is long, then the smartphone is likely to offer a good overall experience.",
            },
        }
    }

    /// Description plus worked example, formatted for embedding in prompts.
    pub fn prompt_block(self) -> String {
        let ex = self.example();
        format!(
            "Reasoning Skill: {}\nDescription: {}\nExample Document: {}\nExample Question: {}\nExample Answer: {}\n",
            self.name(),
            self.description(),
            ex.document,
            ex.question,
            ex.answer
        )
    }
}

impl fmt::Display for ReasoningSkill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn squash(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric() || *c == '&')
        .flat_map(char::to_lowercase)
        .collect::<String>()
        .replace('&', "and")
}

/// Case-insensitive; accepts "Cause & Effect", "Cause and Effect",
/// "CauseEffect", "Critical Thinking" and similar spellings.
pub fn parse_skill(name: &str) -> Result<ReasoningSkill, SkillError> {
    let key = squash(name);
    ReasoningSkill::ALL
        .into_iter()
        .find(|s| squash(s.name()) == key || squash(&format!("{s:?}")) == key)
        .ok_or_else(|| SkillError::UnknownSkill(name.trim().to_string()))
}

impl FromStr for ReasoningSkill {
    type Err = SkillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_skill(s)
    }
}

pub fn skill_prompt_block(skill: ReasoningSkill) -> String {
    skill.prompt_block()
}

/// JSON array of `{name, description, example}` for every skill.
pub fn export_skills() -> serde_json::Value {
    ReasoningSkill::ALL
        .iter()
        .map(|s| {
            serde_json::json!({
                "name": s.name(),
                "description": s.description(),
                "example": s.example(),
            })
        })
        .collect()
}

/// Non-empty set of skills a question is estimated to need.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeSet<ReasoningSkill>", into = "BTreeSet<ReasoningSkill>")]
pub struct RequiredSkillSet(BTreeSet<ReasoningSkill>);

impl RequiredSkillSet {
    pub fn new(skills: impl IntoIterator<Item = ReasoningSkill>) -> Result<Self, SkillError> {
        let set: BTreeSet<_> = skills.into_iter().collect();
        if set.is_empty() {
            return Err(SkillError::EmptyRequiredSet);
        }
        Ok(RequiredSkillSet(set))
    }

    pub fn single(skill: ReasoningSkill) -> Self {
        RequiredSkillSet(BTreeSet::from([skill]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, skill: ReasoningSkill) -> bool {
        self.0.contains(&skill)
    }

    pub fn iter(&self) -> impl Iterator<Item = ReasoningSkill> + '_ {
        self.0.iter().copied()
    }

    pub fn as_set(&self) -> &BTreeSet<ReasoningSkill> {
        &self.0
    }
}

impl TryFrom<BTreeSet<ReasoningSkill>> for RequiredSkillSet {
    type Error = SkillError;

    fn try_from(set: BTreeSet<ReasoningSkill>) -> Result<Self, Self::Error> {
        RequiredSkillSet::new(set)
    }
}

impl From<RequiredSkillSet> for BTreeSet<ReasoningSkill> {
    fn from(s: RequiredSkillSet) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    #[default]
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillEstimate {
    pub skills: RequiredSkillSet,
    /// Set when llm mode could not parse the model's answer and the rule
    /// table was used instead.
    pub fell_back: bool,
}

const COMPARISON_CUES: &[&str] = &[
    "compare", "compared", "comparison", "similar", "similarity", "same as", "difference between",
    "different from", "more than", "less than", "older than", "younger than", "larger than",
    "smaller than", "bigger than", "taller than", "longer than", "better than", "worse than",
    "analogous", "resemble", "both",
];
const CAUSAL_CUES: &[&str] =
    &["why", "because", "cause", "caused", "causes", "result of", "effect of", "lead to", "led to", "due to"];
const CLAUSE_MARKERS: &[&str] = &["of the", "that", "who", "whom", "whose", "which", "where", "when"];

fn contains_phrase(words: &[String], phrase: &str) -> usize {
    let target: Vec<&str> = phrase.split(' ').collect();
    words.windows(target.len()).filter(|w| w.iter().zip(&target).all(|(a, b)| a == b)).count()
}

/// Deterministic rule table over the question text: comparison cues map to
/// Analogical, causal cues to Cause & Effect, two or more clause markers
/// (after the first word) to Decompositional; Deductive when nothing fires.
pub fn estimate_rule_based(question: &str) -> RequiredSkillSet {
    let words: Vec<String> = crate::template::scan(question)
        .into_iter()
        .filter(|t| t.kind != crate::template::TokenKind::Punctuation)
        .map(|t| t.surface.to_lowercase())
        .collect();
    let mut skills = BTreeSet::new();
    if COMPARISON_CUES.iter().any(|c| contains_phrase(&words, c) > 0) {
        skills.insert(ReasoningSkill::Analogical);
    }
    if CAUSAL_CUES.iter().any(|c| contains_phrase(&words, c) > 0) {
        skills.insert(ReasoningSkill::CauseEffect);
    }
    let tail = words.get(1..).unwrap_or_default();
    let clauses: usize = CLAUSE_MARKERS.iter().map(|m| contains_phrase(tail, m)).sum();
    if clauses >= 2 {
        skills.insert(ReasoningSkill::Decompositional);
    }
    if skills.is_empty() {
        skills.insert(ReasoningSkill::Deductive);
    }
    RequiredSkillSet(skills)
}

fn estimate_prompt(question: &str) -> String {
    let mut prompt = String::from(
        "Which of the following reasoning skills are needed to answer the question below?\n",
    );
    for s in ReasoningSkill::ALL {
        prompt.push_str(&format!("- {}: {}\n", s.name(), s.description()));
    }
    prompt.push_str(&format!(
        "\nQuestion: {question}\n\nAnswer with a comma-separated list of skill names only."
    ));
    prompt
}

fn parse_skill_list(reply: &str) -> Option<RequiredSkillSet> {
    let line = reply.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    let line = line.split_once(':').map_or(line, |(_, rest)| rest);
    let skills: Result<BTreeSet<_>, _> = line
        .split([',', ';'])
        .map(|s| s.trim().trim_matches(|c: char| c == '.' || c == '"' || c == '*'))
        .filter(|s| !s.is_empty())
        .map(parse_skill)
        .collect();
    RequiredSkillSet::new(skills.ok()?).ok()
}

/// Estimates the required skill set. Llm mode falls back to the rule table
/// (and flags the estimate) when the gateway fails or the reply does not
/// parse; the result is never empty.
pub fn estimate_required_skills(
    question: &RawQuestion,
    gateway: Option<&Gateway>,
    mode: EstimationMode,
) -> SkillEstimate {
    match (mode, gateway) {
        (EstimationMode::Llm, Some(gw)) => {
            let reply = gw.ask(
                Purpose::SkillEstimate,
                0,
                vec![ChatMessage::user(estimate_prompt(&question.text))],
            );
            match reply.ok().as_deref().and_then(parse_skill_list) {
                Some(skills) => SkillEstimate { skills, fell_back: false },
                None => {
                    log::warn!("skill estimate for {} unparseable; using rule table", question.id);
                    SkillEstimate { skills: estimate_rule_based(&question.text), fell_back: true }
                }
            }
        }
        (EstimationMode::Llm, None) => {
            SkillEstimate { skills: estimate_rule_based(&question.text), fell_back: true }
        }
        (EstimationMode::RuleBased, _) => {
            SkillEstimate { skills: estimate_rule_based(&question.text), fell_back: false }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, Purpose};
    use std::sync::Arc;

    #[test]
    fn taxonomy_has_seven_members_and_names_round_trip() {
        assert_eq!(ReasoningSkill::ALL.len(), 7);
        for s in ReasoningSkill::ALL {
            assert_eq!(parse_skill(s.name()).unwrap(), s);
            assert_eq!(parse_skill(&format!("{s:?}")).unwrap(), s);
            assert_eq!(parse_skill(&s.name().to_uppercase()).unwrap(), s);
        }
    }

    #[test]
    fn parse_spellings() {
        assert_eq!(parse_skill("deductive"), Ok(ReasoningSkill::Deductive));
        assert_eq!(parse_skill("Cause & Effect"), Ok(ReasoningSkill::CauseEffect));
        assert_eq!(parse_skill("cause and effect"), Ok(ReasoningSkill::CauseEffect));
        assert_eq!(parse_skill("Critical Thinking"), Ok(ReasoningSkill::CriticalThinking));
        assert_eq!(parse_skill("telepathic"), Err(SkillError::UnknownSkill("telepathic".into())));
    }

    #[test]
    fn prompt_blocks() {
        assert!(skill_prompt_block(ReasoningSkill::Deductive).contains("all humans are mortals"));
        assert!(skill_prompt_block(ReasoningSkill::Abductive).contains("a plate of food still hot"));
        for s in ReasoningSkill::ALL {
            let block = skill_prompt_block(s);
            assert!(!block.is_empty());
            assert_eq!(block, s.prompt_block());
            assert!(block.contains(s.example().question));
        }
    }

    #[test]
    fn export_lists_all_skills() {
        let v = export_skills();
        let arr = v.as_array().unwrap();
        assert_eq!(arr.len(), 7);
        assert_eq!(arr[3]["name"], "Cause & Effect");
        assert!(arr[0]["example"]["document"].as_str().unwrap().contains("three sides"));
    }

    #[test]
    fn rule_table() {
        let simple = estimate_rule_based("Who wrote Pride and Prejudice?");
        assert_eq!(simple, RequiredSkillSet::single(ReasoningSkill::Deductive));

        let multi = estimate_rule_based(
            "Which city is the birthplace of the founder of the company that built the Eiffel Tower?",
        );
        assert!(multi.contains(ReasoningSkill::Decompositional));

        assert!(estimate_rule_based("Why did the empire fall?").contains(ReasoningSkill::CauseEffect));
        assert!(estimate_rule_based("Is Paris larger than Rome?").contains(ReasoningSkill::Analogical));
        assert_eq!(estimate_rule_based("zzz"), RequiredSkillSet::single(ReasoningSkill::Deductive));
    }

    #[test]
    fn empty_required_set_is_rejected() {
        assert_eq!(RequiredSkillSet::new([]), Err(SkillError::EmptyRequiredSet));
        let bad: Result<RequiredSkillSet, _> = serde_json::from_str("[]");
        assert!(bad.is_err());
        let ok: RequiredSkillSet = serde_json::from_str(r#"["Deductive","CauseEffect"]"#).unwrap();
        assert_eq!(ok.len(), 2);
    }

    #[test]
    fn llm_mode_parses_and_falls_back() {
        let q = RawQuestion::new("q", "Who wrote Pride and Prejudice?").unwrap();
        let mock = MockBackend::new().with_tag(Purpose::SkillEstimate, "Skills: Deductive, Cause & Effect");
        let gw = Gateway::new(Arc::new(mock));
        let est = estimate_required_skills(&q, Some(&gw), EstimationMode::Llm);
        assert!(!est.fell_back);
        assert_eq!(
            est.skills,
            RequiredSkillSet::new([ReasoningSkill::Deductive, ReasoningSkill::CauseEffect]).unwrap()
        );

        let mock = MockBackend::new().with_tag(Purpose::SkillEstimate, "I think telepathy.");
        let gw = Gateway::new(Arc::new(mock));
        let est = estimate_required_skills(&q, Some(&gw), EstimationMode::Llm);
        assert!(est.fell_back);
        assert_eq!(est.skills, RequiredSkillSet::single(ReasoningSkill::Deductive));
    }
}
