use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::skills::ReasoningSkill;

/// Ordered, non-empty sequence of reasoning skills.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ReasoningSkill>", into = "Vec<ReasoningSkill>")]
pub struct ReasoningPath(Vec<ReasoningSkill>);

impl ReasoningPath {
    pub fn new(steps: Vec<ReasoningSkill>) -> Result<Self, SynthesisError> {
        if steps.is_empty() {
            return Err(SynthesisError::InvalidConfig("reasoning path must have at least one step".into()));
        }
        Ok(ReasoningPath(steps))
    }

    pub fn steps(&self) -> &[ReasoningSkill] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distinct skills in first-occurrence order.
    pub fn distinct(&self) -> Vec<ReasoningSkill> {
        let mut seen = Vec::new();
        for s in &self.0 {
            if !seen.contains(s) {
                seen.push(*s);
            }
        }
        seen
    }

    pub fn contains(&self, skill: ReasoningSkill) -> bool {
        self.0.contains(&skill)
    }
}

impl TryFrom<Vec<ReasoningSkill>> for ReasoningPath {
    type Error = SynthesisError;

    fn try_from(steps: Vec<ReasoningSkill>) -> Result<Self, Self::Error> {
        ReasoningPath::new(steps)
    }
}

impl From<ReasoningPath> for Vec<ReasoningSkill> {
    fn from(p: ReasoningPath) -> Self {
        p.0
    }
}

impl fmt::Display for ReasoningPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|s| s.name()).collect();
        f.write_str(&names.join(" -> "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    /// `length_weights[i]` is the relative weight of a path of length `i + 1`.
    pub length_weights: Vec<f64>,
    pub max_len: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { length_weights: vec![0.4, 0.3, 0.2, 0.1], max_len: 4 }
    }
}

impl PathConfig {
    fn effective_weights(&self) -> &[f64] {
        let n = self.max_len.min(self.length_weights.len());
        &self.length_weights[..n]
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let w = self.effective_weights();
        if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(SynthesisError::InvalidConfig(format!(
                "path length weights {:?} (max_len {}) are not a usable distribution",
                self.length_weights, self.max_len
            )));
        }
        Ok(())
    }
}

/// Samples a path length from the configured weights, then each step
/// uniformly from the taxonomy with replacement. Deterministic in `seed`.
/// An unusable weight vector degrades to length 1.
pub fn sample_path(config: &PathConfig, seed: u64) -> ReasoningPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = match WeightedIndex::new(config.effective_weights()) {
        Ok(dist) => dist.sample(&mut rng) + 1,
        Err(_) => 1,
    };
    let steps = (0..len)
        .map(|_| ReasoningSkill::ALL[rng.gen_range(0..ReasoningSkill::ALL.len())])
        .collect();
    ReasoningPath(steps)
}
