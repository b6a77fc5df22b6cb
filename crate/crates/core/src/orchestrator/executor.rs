//! The boundary between the exploration loop and whatever runs a plan.

use std::path::PathBuf;

use thiserror::Error;

use super::plan::CommandPlan;
use crate::design_space::{validate, DesignSpace, Validity};
use crate::scenario::ScenarioSpec;
use crate::vehicle_model::{SimulationOutput, VehicleModel};

#[derive(Debug, Error, PartialEq)]
pub enum ExecutorError {
    #[error("invalid command plan: {0}")]
    InvalidPlan(String),
    #[error("executor not available: {0}")]
    Unsupported(String),
    #[error("execution failed: {0}")]
    Failed(String),
}

/// Runs a command plan and returns the collected outputs.
pub trait Executor: Send + Sync {
    fn execute(&self, plan: &CommandPlan, scenario: &ScenarioSpec, seed: u64) -> Result<SimulationOutput, ExecutorError>;
}

/// Runs plans against the analytic vehicle model.
#[derive(Debug, Clone)]
pub struct SyntheticExecutor {
    pub model: VehicleModel,
    pub space: DesignSpace,
}

impl SyntheticExecutor {
    pub fn new(space: DesignSpace) -> Self {
        Self {
            model: VehicleModel::default(),
            space,
        }
    }
}

impl Executor for SyntheticExecutor {
    fn execute(&self, plan: &CommandPlan, scenario: &ScenarioSpec, seed: u64) -> Result<SimulationOutput, ExecutorError> {
        plan.validate().map_err(|e| ExecutorError::InvalidPlan(e.to_string()))?;
        let p = plan
            .design_point()
            .ok_or_else(|| ExecutorError::InvalidPlan("missing a hardware setting".into()))?;
        if let Validity::Invalid(axis) = validate(&p, &self.space) {
            return Err(ExecutorError::InvalidPlan(format!("{p}: {axis} is outside the design space")));
        }
        Ok(self.model.simulate(&p, scenario, seed))
    }
}

/// Placeholder for driving a real simulator through an external program,
/// one invocation per plan. Not implemented: every call fails.
#[derive(Debug, Clone)]
pub struct ExternalExecutor {
    pub program: PathBuf,
}

impl Executor for ExternalExecutor {
    fn execute(&self, _plan: &CommandPlan, _scenario: &ScenarioSpec, _seed: u64) -> Result<SimulationOutput, ExecutorError> {
        Err(ExecutorError::Unsupported(format!(
            "external execution via {} is not implemented",
            self.program.display()
        )))
    }
}
