//! Design-point proposal strategies.
//!
//! - [`ExhaustiveStrategy`] walks the enumeration order.
//! - [`RandomStrategy`] samples unevaluated points uniformly.
//! - [`GeneticStrategy`] evolves index chromosomes.
//! - [`GuidedStrategy`] applies bottleneck-driven rules to the last result.
//! - [`LlmStrategy`] asks a text-completion backend and parses its answer.

mod genetic;
mod guided;
mod llm;

pub use genetic::{crossover, genetic_step, mutate, GaParams, GeneticStrategy};
pub use guided::{guided_rules, GuidedParams, GuidedStrategy};
pub use llm::{
    assemble_prompts, parse_llm_proposal, render_point, BackendError, HttpBackend, LlmBackend, LlmParams,
    LlmStrategy, ParseError, ScriptedBackend, FORMAT_REMINDER,
};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::{enumerate, DesignPoint, DesignSpace};
use crate::orchestrator::{CombinedReport, MemoryRecord};
use crate::rng::{substream, Rng};
use crate::scenario::ScenarioSpec;

/// What a strategy sees when asked for the next point.
pub struct ProposalContext<'a> {
    pub history: &'a [MemoryRecord],
    pub last_report: Option<&'a CombinedReport>,
    pub space: &'a DesignSpace,
    pub scenario: &'a ScenarioSpec,
}

impl ProposalContext<'_> {
    pub fn seen(&self) -> HashSet<DesignPoint> {
        self.history.iter().map(|r| r.point).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub point: DesignPoint,
    pub rationale: String,
    pub terminate: bool,
}

impl Proposal {
    pub fn next(point: DesignPoint, rationale: impl Into<String>) -> Self {
        Self {
            point,
            rationale: rationale.into(),
            terminate: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("every point of the design space has been evaluated")]
    Exhausted,
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
}

pub trait Strategy {
    fn name(&self) -> &str;
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError>;
}

/// Enumeration order, skipping evaluated points.
#[derive(Debug, Default)]
pub struct ExhaustiveStrategy;

impl Strategy for ExhaustiveStrategy {
    fn name(&self) -> &str {
        "exhaustive"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let seen = ctx.seen();
        enumerate(ctx.space)
            .into_iter()
            .find(|p| !seen.contains(p))
            .map(|p| Proposal::next(p, "next point in enumeration order"))
            .ok_or(SearchError::Exhausted)
    }
}

/// Uniform over unevaluated points.
#[derive(Debug)]
pub struct RandomStrategy {
    rng: Rng,
}

impl RandomStrategy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: substream(seed, "strategy/random"),
        }
    }
}

impl Strategy for RandomStrategy {
    fn name(&self) -> &str {
        "random"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let seen = ctx.seen();
        let fresh: Vec<DesignPoint> = enumerate(ctx.space).into_iter().filter(|p| !seen.contains(p)).collect();
        fresh
            .choose(&mut self.rng)
            .map(|p| Proposal::next(*p, "uniform random sample"))
            .ok_or(SearchError::Exhausted)
    }
}

/// Strategy names accepted by [`build_strategy`].
pub const STRATEGY_NAMES: [&str; 5] = ["exhaustive", "random", "ga", "guided", "llm"];

/// Strategy parameters as they appear in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    #[serde(default)]
    pub guided: GuidedParams,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub llm: LlmParams,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            name: "guided".into(),
            guided: GuidedParams::default(),
            ga: GaParams::default(),
            llm: LlmParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("unknown strategy `{0}` (expected one of: exhaustive, random, ga, guided, llm)")]
    Unknown(String),
    #[error("the llm strategy needs a backend: set `script` or `endpoint_env` in the [llm] section")]
    MissingBackend,
    #[error("invalid strategy parameter: {0}")]
    Param(String),
}

/// Instantiate the strategy `name`; `backend` is only used by `llm`.
pub fn build_strategy(
    name: &str,
    cfg: &StrategyConfig,
    seed: u64,
    backend: Option<Box<dyn LlmBackend>>,
) -> Result<Box<dyn Strategy>, BuildError> {
    Ok(match name {
        "exhaustive" => Box::new(ExhaustiveStrategy),
        "random" => Box::new(RandomStrategy::new(seed)),
        "ga" => {
            cfg.ga.validate().map_err(BuildError::Param)?;
            Box::new(GeneticStrategy::new(cfg.ga.clone(), seed))
        }
        "guided" => {
            cfg.guided.validate().map_err(BuildError::Param)?;
            Box::new(GuidedStrategy::new(cfg.guided.clone(), seed))
        }
        "llm" => {
            cfg.guided.validate().map_err(BuildError::Param)?;
            let backend = backend.ok_or(BuildError::MissingBackend)?;
            Box::new(LlmStrategy::new(backend, cfg.llm.clone(), GuidedStrategy::new(cfg.guided.clone(), seed)))
        }
        other => return Err(BuildError::Unknown(other.to_string())),
    })
}
