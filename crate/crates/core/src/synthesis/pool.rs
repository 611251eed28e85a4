use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    demo_id, propose_bindings, propose_variants, sample_path, synthesize_with, DemoPool, DemoSpec, FillStrategy,
    PathConfig, ReasoningPath, SyntheticDemo, SynthesisError, TermBank,
};
use crate::gateway::Gateway;
use crate::template::QuestionTemplate;

pub const POOL_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub m_target: usize,
    pub strategy: FillStrategy,
    pub seed: u64,
    /// Synthesis attempts allowed; `None` means twice `m_target`.
    pub max_attempts: Option<usize>,
    pub path: PathConfig,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            m_target: 20,
            strategy: FillStrategy::default(),
            seed: 0,
            max_attempts: None,
            path: PathConfig::default(),
        }
    }
}

impl PoolConfig {
    pub fn budget(&self) -> usize {
        self.max_attempts.unwrap_or(2 * self.m_target)
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.m_target == 0 {
            return Err(SynthesisError::InvalidConfig("m_target must be at least 1".into()));
        }
        if self.budget() == 0 {
            return Err(SynthesisError::InvalidConfig("attempt budget must be at least 1".into()));
        }
        self.path.validate()
    }
}

/// Counters from one pool build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub attempts: usize,
    pub parse_failures: usize,
    pub gateway_failures: usize,
    pub duplicates: usize,
}

/// Seed for attempt `index`, decorrelated from neighbouring base seeds.
fn attempt_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Runs synthesis attempts until `m_target` distinct demos exist or the
/// attempt budget runs out. Attempts are evaluated in parallel chunks but
/// folded in index order, so the result depends only on the inputs.
pub fn build_pool(
    template: &QuestionTemplate,
    config: &PoolConfig,
    terms: &TermBank,
    gateway: &Gateway,
) -> Result<DemoPool, SynthesisError> {
    config.validate()?;
    let budget = config.budget();
    let bindings = propose_bindings(template, budget, config.strategy, terms, Some(gateway), config.seed)?;
    let variants = match config.strategy {
        FillStrategy::TemplateVariation => propose_variants(template, budget, gateway),
        _ => Vec::new(),
    };

    let mut stats = BuildStats::default();
    let mut demos: Vec<SyntheticDemo> = Vec::new();
    let mut seen: HashSet<(String, ReasoningPath)> = HashSet::new();
    let mut next = 0;
    while demos.len() < config.m_target && next < budget {
        let chunk = (config.m_target - demos.len()).min(budget - next);
        let results: Vec<Result<SyntheticDemo, SynthesisError>> = (next..next + chunk)
            .into_par_iter()
            .map(|i| {
                let path = sample_path(&config.path, attempt_seed(config.seed, i));
                let spec = DemoSpec {
                    demo_id: demo_id(i),
                    ordinal: i as u32,
                    variant: (!variants.is_empty()).then(|| variants[i % variants.len()].clone()),
                    max_path_len: config.path.max_len,
                };
                synthesize_with(template, &bindings[i], &path, gateway, &spec)
            })
            .collect();
        next += chunk;
        for result in results {
            stats.attempts += 1;
            match result {
                Ok(demo) => {
                    if demos.len() >= config.m_target {
                        continue;
                    }
                    if seen.insert((demo.q_syn.clone(), demo.path.clone())) {
                        demos.push(demo);
                    } else {
                        stats.duplicates += 1;
                    }
                }
                Err(SynthesisError::Gateway(e)) => {
                    log::warn!("synthesis request failed: {e}");
                    stats.gateway_failures += 1;
                }
                Err(e) => {
                    log::debug!("synthesis attempt discarded: {e}");
                    stats.parse_failures += 1;
                }
            }
        }
    }
    if demos.is_empty() {
        return Err(SynthesisError::PoolEmpty { attempts: stats.attempts });
    }
    if demos.len() < config.m_target {
        log::warn!("pool has {} of {} demos after {} attempts", demos.len(), config.m_target, stats.attempts);
    }
    Ok(DemoPool { source_template: template.clone(), demos, stats })
}

#[derive(Serialize)]
struct PoolFileOut<'a> {
    schema_version: u64,
    template: &'a QuestionTemplate,
    demos: &'a [SyntheticDemo],
    stats: &'a super::BuildStats,
}

#[derive(Deserialize)]
struct PoolFileIn {
    template: QuestionTemplate,
    demos: Vec<SyntheticDemo>,
    #[serde(default)]
    stats: BuildStats,
}

/// Writes the pool as JSON via a temporary file and rename.
pub fn save_pool(pool: &DemoPool, path: &Path) -> Result<(), SynthesisError> {
    let doc = PoolFileOut {
        schema_version: POOL_SCHEMA_VERSION,
        template: &pool.source_template,
        demos: &pool.demos,
        stats: &pool.stats,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads and validates a pool file. An empty demo list loads as an
/// unusable pool rather than an error.
pub fn load_pool(path: &Path) -> Result<DemoPool, SynthesisError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
    if found != POOL_SCHEMA_VERSION {
        return Err(SynthesisError::UnsupportedPoolVersion { found, expected: POOL_SCHEMA_VERSION });
    }
    let file: PoolFileIn = serde_json::from_value(value)?;
    let pool = DemoPool { source_template: file.template, demos: file.demos, stats: file.stats };
    validate_pool(&pool)?;
    if !pool.is_usable() {
        log::warn!("{} holds no demos; the pool is unusable", path.display());
    }
    Ok(pool)
}

fn validate_pool(pool: &DemoPool) -> Result<(), SynthesisError> {
    let mut ids = HashSet::new();
    for demo in &pool.demos {
        if !ids.insert(demo.demo_id.as_str()) {
            return Err(SynthesisError::InvalidPool(format!("duplicate demo id {}", demo.demo_id)));
        }
        let rendered = pool
            .source_template
            .render(&demo.bindings)
            .map_err(|e| SynthesisError::InvalidPool(format!("{}: {e}", demo.demo_id)))?;
        if rendered != demo.q_syn {
            return Err(SynthesisError::InvalidPool(format!(
                "{}: q_syn does not match the template rendering",
                demo.demo_id
            )));
        }
        if let Some(s) = demo.judge_score {
            if !(1..=10).contains(&s) {
                return Err(SynthesisError::InvalidPool(format!("{}: judge score {s} out of range", demo.demo_id)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, Purpose};
    use crate::template::{Gazetteer, PlaceholderType, RawQuestion, RuleBasedIdentifier};
    use std::sync::Arc;

    fn template() -> QuestionTemplate {
        let q = RawQuestion::new("q", "What is Bill Gates known for?").unwrap();
        let id = RuleBasedIdentifier::new(Gazetteer::new().with("Bill Gates", PlaceholderType::Person));
        QuestionTemplate::from_question(&q, &id).unwrap()
    }

    fn terms() -> TermBank {
        TermBank::new().with(
            PlaceholderType::Person,
            ["Marie Curie", "Alan Turing", "Ada Lovelace", "Nikola Tesla", "Rosalind Franklin"],
        )
    }

    fn response(i: usize) -> String {
        format!("Reference Document: doc {i}.\nStep-by-step Reasoning Path:\n1. step\nGenerated Answer: answer {i}")
    }

    fn config(m: usize) -> PoolConfig {
        PoolConfig { m_target: m, strategy: FillStrategy::RandomFill, seed: 11, ..Default::default() }
    }

    fn gateway(texts: Vec<String>) -> Gateway {
        Gateway::new(Arc::new(MockBackend::new().with_tag_list(Purpose::Synthesis, texts)))
    }

    #[test]
    fn fills_to_target() {
        let gw = gateway((0..40).map(response).collect());
        let pool = build_pool(&template(), &config(20), &terms(), &gw).unwrap();
        assert!(pool.size() <= 20);
        let ids: HashSet<_> = pool.demos.iter().map(|d| &d.demo_id).collect();
        assert_eq!(ids.len(), pool.size());
        for d in &pool.demos {
            assert_eq!(pool.source_template.render(&d.bindings).unwrap(), d.q_syn);
        }
        // 5 names × many paths: duplicates are rare, the budget covers them
        assert_eq!(pool.size(), 20);
    }

    #[test]
    fn all_malformed_is_pool_empty() {
        let gw = gateway(vec!["nothing useful".into()]);
        let err = build_pool(&template(), &config(5), &terms(), &gw).unwrap_err();
        assert!(matches!(err, SynthesisError::PoolEmpty { attempts: 10 }));
    }

    #[test]
    fn duplicates_are_dropped() {
        // One name, one fixed echoed path: every attempt is the same pair.
        let one = TermBank::new().with(PlaceholderType::Person, ["Marie Curie"]);
        let text = "Step-by-step Reasoning Path:\n1. s\nGenerated Answer: a\nReasoning Skill Used: Deductive";
        let gw = gateway(vec![text.into()]);
        let pool = build_pool(&template(), &config(4), &one, &gw).unwrap();
        assert_eq!(pool.size(), 1);
        assert_eq!(pool.stats.attempts, 8);
        assert_eq!(pool.stats.duplicates, 7);
    }

    #[test]
    fn save_load_round_trip() {
        let gw = gateway((0..10).map(response).collect());
        let mut pool = build_pool(&template(), &config(5), &terms(), &gw).unwrap();
        pool.demos[0].judge_score = Some(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        save_pool(&pool, &path).unwrap();
        assert_eq!(load_pool(&path).unwrap(), pool);
    }

    #[test]
    fn wrong_version_and_garbage_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        std::fs::write(&path, r#"{"schema_version": 99, "template": null, "demos": []}"#).unwrap();
        assert!(matches!(
            load_pool(&path),
            Err(SynthesisError::UnsupportedPoolVersion { found: 99, expected: 1 })
        ));
        std::fs::write(&path, "{\"schema_version\": 1, \"demos\": [").unwrap();
        assert!(matches!(load_pool(&path), Err(SynthesisError::Decode(_))));
    }

    #[test]
    fn empty_pool_loads_unusable() {
        let pool = DemoPool { source_template: template(), demos: vec![], stats: BuildStats::default() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        save_pool(&pool, &path).unwrap();
        let back = load_pool(&path).unwrap();
        assert_eq!(back.size(), 0);
        assert!(!back.is_usable());
    }

    #[test]
    fn tampered_question_is_invalid() {
        let gw = gateway((0..4).map(response).collect());
        let mut pool = build_pool(&template(), &config(2), &terms(), &gw).unwrap();
        pool.demos[0].q_syn = "What is nobody known for?".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        save_pool(&pool, &path).unwrap();
        assert!(matches!(load_pool(&path), Err(SynthesisError::InvalidPool(_))));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let build = |threads| {
            let gw = gateway((0..40).map(response).collect());
            let rt = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let pool = rt.install(|| build_pool(&template(), &config(20), &terms(), &gw).unwrap());
            serde_json::to_string(&pool).unwrap()
        };
        let one = build(1);
        assert_eq!(one, build(8));
        assert_eq!(one, build(3));
    }
}
