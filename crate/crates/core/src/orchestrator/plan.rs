//! Executor command plans.
//!
//! Hardware settings take effect before the task launches, and profiling
//! brackets the launch. The textual form is one command per line:
//!
//! ```text
//! set_cores 16
//! set_frequency 1.8
//! set_lidar_rate 14
//! start_profiling
//! launch_task lane_driving parking_lot
//! stop_profiling
//! collect_outputs
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::DesignPoint;
use crate::scenario::{ScenarioSpec, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    SetCores { cores: u32 },
    SetFrequency { ghz: f64 },
    SetLidarRate { hz: u32 },
    StartProfiling,
    LaunchTask { task: Task, map_id: String },
    StopProfiling,
    CollectOutputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPlan {
    pub steps: Vec<Command>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("plan violates ordering: {0}")]
    Order(&'static str),
    #[error("plan is missing `{0}`")]
    Missing(&'static str),
}

/// Settings first, then profiling around the launch, then collection.
pub fn build_command_plan(p: &DesignPoint, s: &ScenarioSpec) -> CommandPlan {
    CommandPlan {
        steps: vec![
            Command::SetCores { cores: p.cores },
            Command::SetFrequency {
                ghz: p.core_frequency_ghz,
            },
            Command::SetLidarRate { hz: p.lidar_hz },
            Command::StartProfiling,
            Command::LaunchTask {
                task: s.task,
                map_id: s.map_id.clone(),
            },
            Command::StopProfiling,
            Command::CollectOutputs,
        ],
    }
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::LaneDriving => "lane_driving",
        Task::AutomatedValetParking => "automated_valet_parking",
    }
}

impl CommandPlan {
    fn position(&self, f: impl Fn(&Command) -> bool) -> Option<usize> {
        self.steps.iter().position(f)
    }

    /// Check the ordering invariants.
    pub fn validate(&self) -> Result<(), PlanError> {
        let launch = self
            .position(|c| matches!(c, Command::LaunchTask { .. }))
            .ok_or(PlanError::Missing("launch_task"))?;
        let start = self
            .position(|c| matches!(c, Command::StartProfiling))
            .ok_or(PlanError::Missing("start_profiling"))?;
        let stop = self
            .position(|c| matches!(c, Command::StopProfiling))
            .ok_or(PlanError::Missing("stop_profiling"))?;
        let settings_after_launch = self.steps[launch..].iter().any(|c| {
            matches!(
                c,
                Command::SetCores { .. } | Command::SetFrequency { .. } | Command::SetLidarRate { .. }
            )
        });
        if settings_after_launch {
            return Err(PlanError::Order("hardware settings must precede launch_task"));
        }
        if start > launch {
            return Err(PlanError::Order("start_profiling must precede launch_task"));
        }
        if stop < launch {
            return Err(PlanError::Order("stop_profiling must follow launch_task"));
        }
        Ok(())
    }

    /// The configured design point, if every setting is present.
    pub fn design_point(&self) -> Option<DesignPoint> {
        let mut cores = None;
        let mut ghz = None;
        let mut hz = None;
        for c in &self.steps {
            match c {
                Command::SetCores { cores: n } => cores = Some(*n),
                Command::SetFrequency { ghz: g } => ghz = Some(*g),
                Command::SetLidarRate { hz: h } => hz = Some(*h),
                _ => {}
            }
        }
        Some(DesignPoint::new(cores?, ghz?, hz?))
    }
}

impl fmt::Display for CommandPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.steps {
            match c {
                Command::SetCores { cores } => writeln!(f, "set_cores {cores}")?,
                Command::SetFrequency { ghz } => writeln!(f, "set_frequency {ghz:?}")?,
                Command::SetLidarRate { hz } => writeln!(f, "set_lidar_rate {hz}")?,
                Command::StartProfiling => writeln!(f, "start_profiling")?,
                Command::LaunchTask { task, map_id } => writeln!(f, "launch_task {} {map_id}", task_name(*task))?,
                Command::StopProfiling => writeln!(f, "stop_profiling")?,
                Command::CollectOutputs => writeln!(f, "collect_outputs")?,
            }
        }
        Ok(())
    }
}

impl FromStr for CommandPlan {
    type Err = PlanError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| PlanError::Parse { line: i + 1, reason };
            let (cmd, arg) = line.split_once(' ').map_or((line, ""), |(c, a)| (c, a.trim()));
            let num = |what: &str| err(format!("bad {what} argument `{arg}`"));
            steps.push(match cmd {
                "set_cores" => Command::SetCores {
                    cores: arg.parse().map_err(|_| num("core count"))?,
                },
                "set_frequency" => Command::SetFrequency {
                    ghz: arg.parse().map_err(|_| num("frequency"))?,
                },
                "set_lidar_rate" => Command::SetLidarRate {
                    hz: arg.parse().map_err(|_| num("rate"))?,
                },
                "start_profiling" => Command::StartProfiling,
                "stop_profiling" => Command::StopProfiling,
                "collect_outputs" => Command::CollectOutputs,
                "launch_task" => {
                    let (task, map_id) = arg
                        .split_once(' ')
                        .ok_or_else(|| err("launch_task needs a task and a map id".into()))?;
                    let task = match task {
                        "lane_driving" => Task::LaneDriving,
                        "automated_valet_parking" => Task::AutomatedValetParking,
                        other => return Err(err(format!("unknown task `{other}`"))),
                    };
                    Command::LaunchTask {
                        task,
                        map_id: map_id.trim().to_string(),
                    }
                }
                other => return Err(err(format!("unknown command `{other}`"))),
            });
        }
        Ok(CommandPlan { steps })
    }
}
