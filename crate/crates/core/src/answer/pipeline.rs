use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{answer, AnswerError, AnswerResult};
use crate::config::{FremConfig, IdentifierMode};
use crate::gateway::Gateway;
use crate::selection::{select_with_fallback, Fallback, SelectionError, SelectionTrace};
use crate::skills::{estimate_required_skills, SkillEstimate};
use crate::synthesis::{build_pool, load_pool, save_pool, DemoPool, PoolConfig, SynthesisError, TermBank};
use crate::template::{Gazetteer, LlmIdentifier, QuestionTemplate, RawQuestion, RuleBasedIdentifier, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Template,
    Pool,
    Skills,
    Select,
    Extract,
    Answer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Template => "template",
            Stage::Pool => "pool",
            Stage::Skills => "skills",
            Stage::Select => "select",
            Stage::Extract => "extract",
            Stage::Answer => "answer",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {failure}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub failure: StageFailure,
}

fn at<E: Into<StageFailure>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, failure: e.into() }
}

/// Built pools keyed by template fingerprint, optionally mirrored to
/// `<dir>/<fingerprint>.json`.
#[derive(Debug, Default)]
pub struct PoolCache {
    dir: Option<PathBuf>,
    pools: Mutex<HashMap<String, Arc<DemoPool>>>,
}

impl PoolCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: PathBuf) -> Self {
        PoolCache { dir: Some(dir), pools: Mutex::default() }
    }

    pub fn insert(&self, pool: DemoPool) -> Arc<DemoPool> {
        let pool = Arc::new(pool);
        self.pools.lock().expect("pool cache poisoned").insert(pool.source_template.fingerprint(), pool.clone());
        pool
    }

    pub fn get(&self, fingerprint: &str) -> Option<Arc<DemoPool>> {
        if let Some(hit) = self.pools.lock().expect("pool cache poisoned").get(fingerprint) {
            return Some(hit.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{fingerprint}.json"));
        if !path.exists() {
            return None;
        }
        match load_pool(&path) {
            Ok(pool) if pool.is_usable() => Some(self.insert(pool)),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring cached pool {}: {e}", path.display());
                None
            }
        }
    }

    fn store(&self, pool: DemoPool) -> Result<Arc<DemoPool>, SynthesisError> {
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir)?;
            save_pool(&pool, &dir.join(format!("{}.json", pool.source_template.fingerprint())))?;
        }
        Ok(self.insert(pool))
    }
}

/// Everything a run needs besides the question, document and gateway.
#[derive(Debug, Clone, Default)]
pub struct FremContext {
    pub config: FremConfig,
    pub gazetteer: Gazetteer,
    pub terms: TermBank,
    /// Shared between clones, so variants of one context reuse pools.
    pub pools: Arc<PoolCache>,
}

impl FremContext {
    pub fn new(config: FremConfig) -> Self {
        FremContext { config, ..Default::default() }
    }

    /// Loads the gazetteer, term files and pool cache directory named in
    /// the config.
    pub fn from_config(config: FremConfig) -> Result<Self, PipelineError> {
        let gazetteer = match &config.paths.gazetteer {
            Some(p) => Gazetteer::load(p).map_err(at(Stage::Template))?,
            None => Gazetteer::new(),
        };
        let terms = match &config.paths.terms_dir {
            Some(p) => TermBank::load_dir(p).map_err(at(Stage::Pool))?,
            None => TermBank::new(),
        };
        let pools = Arc::new(match &config.paths.pool_dir {
            Some(d) => PoolCache::with_dir(d.clone()),
            None => PoolCache::in_memory(),
        });
        Ok(FremContext { config, gazetteer, terms, pools })
    }

    pub fn template_for(&self, question: &RawQuestion, gateway: &Gateway) -> Result<QuestionTemplate, TemplateError> {
        match self.config.identifier {
            IdentifierMode::RuleBased => {
                QuestionTemplate::from_question(question, &RuleBasedIdentifier::new(self.gazetteer.clone()))
            }
            IdentifierMode::Llm => QuestionTemplate::from_question(question, &LlmIdentifier { gateway }),
        }
    }

    /// Cached pool for the template's shape, or a fresh build. An empty
    /// build is retried once with the next seed.
    pub fn pool_for(
        &self,
        template: &QuestionTemplate,
        gateway: &Gateway,
        fallbacks: &mut Vec<String>,
    ) -> Result<Arc<DemoPool>, SynthesisError> {
        if let Some(pool) = self.pools.get(&template.fingerprint()) {
            return Ok(pool);
        }
        let config = &self.config.pool;
        let pool = match build_pool(template, config, &self.terms, gateway) {
            Err(SynthesisError::PoolEmpty { attempts }) => {
                log::warn!("pool empty after {attempts} attempts; retrying with seed {}", config.seed.wrapping_add(1));
                fallbacks.push("pool_retry_next_seed".into());
                let retry = PoolConfig { seed: config.seed.wrapping_add(1), ..config.clone() };
                build_pool(template, &retry, &self.terms, gateway)?
            }
            other => other?,
        };
        self.pools.store(pool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub question_id: String,
    pub config: serde_json::Value,
    pub model_ids: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub stage_timings_ms: BTreeMap<String, f64>,
    pub fallbacks: Vec<String>,
    pub backend: String,
}

/// A run's answer plus its audit artifacts. `result` is deterministic for
/// fixed inputs; `manifest` also carries wall-clock timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FremOutcome {
    pub result: AnswerResult,
    pub template: QuestionTemplate,
    pub required: SkillEstimate,
    pub trace: SelectionTrace,
    pub manifest: RunManifest,
}

/// Template, pool, required skills, selection, focus extraction and answer.
pub fn run_frem(
    question: &RawQuestion,
    document: &str,
    ctx: &FremContext,
    gateway: &Gateway,
) -> Result<FremOutcome, PipelineError> {
    if document.trim().is_empty() {
        return Err(PipelineError { stage: Stage::Extract, failure: AnswerError::InvalidDocument.into() });
    }
    let cfg = &ctx.config;
    let mut timings = BTreeMap::new();
    let mut fallbacks = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
        clock = Instant::now();
    };

    let template = ctx.template_for(question, gateway).map_err(at(Stage::Template))?;
    lap("template", &mut timings);

    let pool = ctx.pool_for(&template, gateway, &mut fallbacks).map_err(at(Stage::Pool))?;
    lap("pool", &mut timings);

    let required = estimate_required_skills(question, Some(gateway), cfg.estimation);
    if required.fell_back {
        fallbacks.push("skill_estimate_rule_table".into());
    }
    lap("skills", &mut timings);

    let selection = select_with_fallback(&pool, &question.text, &required.skills, &cfg.selection, Some(gateway))
        .map_err(at(Stage::Select))?;
    for f in &selection.trace.fallbacks {
        fallbacks.push(match f {
            Fallback::LoweredDelta { delta } => format!("delta_lowered_to_{delta}"),
            Fallback::NoJudge => "selection_without_judge".into(),
        });
    }
    if selection.trace.tiebreak_fell_back {
        fallbacks.push("tiebreak_lexical".into());
    }
    lap("select", &mut timings);

    let result = answer(question, document, &selection.demo_id, &pool, gateway, cfg.focus).map_err(|e| {
        let stage = match e {
            AnswerError::InvalidDocument | AnswerError::FocusEmpty => Stage::Extract,
            _ => Stage::Answer,
        };
        PipelineError { stage, failure: e.into() }
    })?;
    if result.focus_fell_back {
        fallbacks.push("focus_full_document".into());
    }
    lap("extract_answer", &mut timings);

    let manifest = RunManifest {
        question_id: question.id.clone(),
        config: cfg.to_json(),
        model_ids: [
            ("model".to_string(), gateway.settings().model.clone()),
            ("judge_model".to_string(), gateway.settings().judge_model.clone()),
        ]
        .into(),
        seeds: [("pool".to_string(), cfg.pool.seed)].into(),
        stage_timings_ms: timings,
        fallbacks,
        backend: gateway.backend_name().to_string(),
    };
    Ok(FremOutcome { result, template, required, trace: selection.trace, manifest })
}
