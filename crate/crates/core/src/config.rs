//! Run configuration, read from TOML or JSON.
//!
//! Every section is optional; missing fields take their defaults.
//!
//! ```
//! let cfg = frem::config::FremConfig::from_toml_str(r#"
//! [selection]
//! delta = 6
//! [pool]
//! m_target = 10
//! strategy = "random_fill"
//! "#).unwrap();
//! assert_eq!(cfg.selection.delta, 6);
//! assert_eq!(cfg.pool.m_target, 10);
//! assert!(cfg.selection.enable_suw);
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::answer::FocusMode;
use crate::gateway::{GatewaySettings, RemoteSettings};
use crate::selection::SelectionConfig;
use crate::skills::EstimationMode;
use crate::synthesis::PoolConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How placeholders are found in a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierMode {
    #[default]
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Gazetteer file: `surface<TAB>type` per line.
    pub gazetteer: Option<PathBuf>,
    /// Directory of `<type>.txt` term files for random fill.
    pub terms_dir: Option<PathBuf>,
    /// Directory where built pools are cached by template fingerprint.
    pub pool_dir: Option<PathBuf>,
    /// Mock backend fixture file.
    pub fixtures: Option<PathBuf>,
    /// Record/replay cache file.
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FremConfig {
    pub gateway: GatewaySettings,
    pub remote: RemoteSettings,
    pub pool: PoolConfig,
    pub selection: SelectionConfig,
    pub identifier: IdentifierMode,
    pub estimation: EstimationMode,
    pub focus: FocusMode,
    pub paths: PathsConfig,
}

impl FremConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<toml>".into(), message: e.to_string() })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: "<json>".into(), message: e.to_string() })
    }

    /// Reads `.json` files as JSON and anything else as TOML. Relative paths
    /// inside the file are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        let mut cfg = parsed.map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve_against(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.selection.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pool.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.gateway.max_tokens == 0 || self.gateway.max_tokens > self.gateway.max_tokens_ceiling {
            return Err(ConfigError::Invalid(format!(
                "max_tokens {} must be in 1..={}",
                self.gateway.max_tokens, self.gateway.max_tokens_ceiling
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [&mut self.gazetteer, &mut self.terms_dir, &mut self.pool_dir, &mut self.fixtures, &mut self.cache]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::TiebreakMode;
    use crate::synthesis::FillStrategy;

    #[test]
    fn defaults() {
        let cfg = FremConfig::default();
        assert_eq!(cfg.selection.delta, 7);
        assert_eq!(cfg.pool.m_target, 20);
        assert_eq!(cfg.pool.strategy, FillStrategy::TemplateVariation);
        assert_eq!(cfg.pool.path.length_weights, [0.4, 0.3, 0.2, 0.1]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
            identifier = "llm"
            [gateway]
            model = "gpt-4o-mini"
            judge_model = "gpt-4o"
            [selection]
            delta = 5
            enable_judge = false
            tiebreak = "lexical"
        "#;
        let json = r#"{"identifier":"llm","gateway":{"model":"gpt-4o-mini","judge_model":"gpt-4o"},
                      "selection":{"delta":5,"enable_judge":false,"tiebreak":"lexical"}}"#;
        let a = FremConfig::from_toml_str(toml).unwrap();
        assert_eq!(a, FremConfig::from_json_str(json).unwrap());
        assert_eq!(a.selection.tiebreak, TiebreakMode::Lexical);
        assert_eq!(a.identifier, IdentifierMode::Llm);
        assert_eq!(a.gateway.max_tokens, 4096);
    }

    #[test]
    fn load_resolves_relative_paths_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frem.toml");
        std::fs::write(&path, "[paths]\ngazetteer = \"gaz.tsv\"\n").unwrap();
        let cfg = FremConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.gazetteer.unwrap(), dir.path().join("gaz.tsv"));

        std::fs::write(&path, "[selection]\ndelta = 11\n").unwrap();
        assert!(matches!(FremConfig::load(&path), Err(ConfigError::Invalid(_))));
        std::fs::write(&path, "[selection\n").unwrap();
        assert!(matches!(FremConfig::load(&path), Err(ConfigError::Parse { .. })));
    }
}
