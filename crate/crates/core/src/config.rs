//! Exploration config file: one TOML document with the run settings and
//! the `[space]`, `[strategy]`, `[llm]` and `[scenario]` sections.
//!
//! `configs/robotaxi.toml` is the annotated reference example.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::{DesignSpace, SpaceError};
use crate::scenario::{ScenarioConfig, ScenarioError, ScenarioSpec};
use crate::search::{StrategyConfig, STRATEGY_NAMES};

/// An axis written either as an explicit list or as `{ from, to }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec<T> {
    List(Vec<T>),
    Range { from: T, to: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub cores: AxisSpec<u32>,
    pub frequencies_ghz: Vec<f64>,
    pub lidar_rates_hz: AxisSpec<u32>,
}

fn expand(a: &AxisSpec<u32>) -> Vec<u32> {
    match a {
        AxisSpec::List(v) => v.clone(),
        AxisSpec::Range { from, to } => (*from..=*to).collect(),
    }
}

impl SpaceConfig {
    pub fn build(&self) -> Result<DesignSpace, SpaceError> {
        DesignSpace::new(expand(&self.cores), self.frequencies_ghz.clone(), expand(&self.lidar_rates_hz))
    }
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            cores: AxisSpec::Range { from: 1, to: 28 },
            frequencies_ghz: vec![1.0, 1.2, 1.5, 1.8, 2.1],
            lidar_rates_hz: AxisSpec::List(vec![7, 14]),
        }
    }
}

/// Backend for the llm strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Transcript replayed by a scripted backend, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Environment variable holding the HTTP endpoint URL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_env: Option<String>,
    pub timeout_s: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            script: None,
            endpoint_env: None,
            timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationConfig {
    pub budget: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("[space]: {0}")]
    Space(#[from] SpaceError),
    #[error("[scenario]: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Invalid(String),
}

/// Command-line values that shadow config fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub strategy: Option<String>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A validated config with its derived objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExplorationConfig,
    pub space: DesignSpace,
    pub scenario: ScenarioSpec,
}

impl ExplorationConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    /// Read `path`; a relative `llm.script` is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(script), Some(dir)) = (&cfg.llm.script, path.parent()) {
            if script.is_relative() {
                cfg.llm.script = Some(dir.join(script));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.strategy {
            self.strategy.name = s.clone();
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
    }

    pub fn validate(self) -> Result<Resolved, ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::Invalid("budget must be at least 1".into()));
        }
        if !STRATEGY_NAMES.contains(&self.strategy.name.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown strategy `{}` (expected one of: {})",
                self.strategy.name,
                STRATEGY_NAMES.join(", ")
            )));
        }
        self.strategy.guided.validate().map_err(ConfigError::Invalid)?;
        self.strategy.ga.validate().map_err(ConfigError::Invalid)?;
        if !(self.llm.timeout_s.is_finite() && self.llm.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("llm.timeout_s must be positive".into()));
        }
        let space = self.space.build()?;
        let scenario = ScenarioSpec::from_config(&self.scenario)?;
        Ok(Resolved {
            config: self,
            space,
            scenario,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ROBOTAXI_CONFIG;

    #[test]
    fn bundled_config_loads() {
        let r = ExplorationConfig::parse(ROBOTAXI_CONFIG).unwrap().validate().unwrap();
        assert_eq!(r.space.len(), 280);
        assert_eq!(r.config.budget, 15);
        assert_eq!(r.config.strategy.name, "guided");
        assert_eq!(r.config.strategy.guided.core_step, 4);
    }

    #[test]
    fn overrides_shadow_fields() {
        let mut c = ExplorationConfig::parse(ROBOTAXI_CONFIG).unwrap();
        c.apply(&Overrides {
            strategy: Some("ga".into()),
            budget: Some(7),
            seed: Some(42),
            out: Some("elsewhere".into()),
        });
        assert_eq!((c.strategy.name.as_str(), c.budget, c.seed), ("ga", 7, 42));
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExplorationConfig::parse(ROBOTAXI_CONFIG).unwrap();
        c.llm.endpoint_env = Some("AVDSE_LLM_ENDPOINT".into());
        let back = ExplorationConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let zero = ROBOTAXI_CONFIG.replacen("budget = 15", "budget = 0", 1);
        assert!(matches!(ExplorationConfig::parse(&zero).unwrap().validate(), Err(ConfigError::Invalid(_))));
        let unknown = ROBOTAXI_CONFIG.replacen("name = \"guided\"", "name = \"annealing\"", 1);
        assert!(matches!(ExplorationConfig::parse(&unknown).unwrap().validate(), Err(ConfigError::Invalid(_))));
        let typo = ROBOTAXI_CONFIG.replacen("seed = 1", "sed = 1", 1);
        assert!(matches!(ExplorationConfig::parse(&typo), Err(ConfigError::Syntax(_))));
        let empty_axis = ROBOTAXI_CONFIG.replacen("lidar_rates_hz = [7, 14]", "lidar_rates_hz = []", 1);
        assert!(matches!(ExplorationConfig::parse(&empty_axis).unwrap().validate(), Err(ConfigError::Space(_))));
    }
}
