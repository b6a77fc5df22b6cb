//! The exploration loop.
//!
//! Every iteration runs the same components in the same order: the strategy
//! proposes a point, the point becomes a command plan, the executor runs it,
//! the outputs are deciphered into metrics and a report, and the result is
//! appended to memory. Re-proposed points are answered from the cache
//! without spending budget.
//!
//! With a run directory the loop writes:
//!
//! ```text
//! memory.jsonl        one MemoryRecord per line, appended as the run goes
//! reports/iter_N.json the combined report of iteration N
//! result.json         the ExplorationResult summary
//! ```

mod executor;
mod memory;
mod plan;
mod report;

pub use executor::{Executor, ExecutorError, ExternalExecutor, SyntheticExecutor};
pub use memory::{MemoryRecord, MemoryStore, VerdictSummary};
pub use plan::{build_command_plan, Command, CommandPlan, PlanError};
pub use report::{combined_report, decipher, CombinedReport, Deciphered};

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::{hardware_cost_milli, is_feasible, DesignPoint, DesignSpace};
use crate::pareto_eval::{feasible_objectives, pareto_front, ObjectivePoint};
use crate::scenario::ScenarioSpec;
use crate::search::{ProposalContext, SearchError, Strategy};
use crate::trace_analysis::{Topology, TraceError};
use crate::trajectory_analysis::TrajectoryParams;
use crate::vehicle_model::pipeline_topology;

/// Most records handed to a strategy as references.
pub const REFERENCE_CAP: usize = 6;

/// Default number of most recent records always referenced.
pub const DEFAULT_K_RECENT: usize = 3;

/// Curated subset of memory: cost extremes, the fastest feasible and the
/// slowest record, plus the `k_recent` latest, deduplicated, capped at
/// [`REFERENCE_CAP`] and ordered by iteration.
pub fn select_references(memory: &[MemoryRecord], k_recent: usize) -> Vec<MemoryRecord> {
    if memory.is_empty() {
        return Vec::new();
    }
    let cost = |r: &MemoryRecord| hardware_cost_milli(&r.point);
    let mut picks: Vec<usize> = Vec::new();
    let by = |f: &dyn Fn(&MemoryRecord, &MemoryRecord) -> std::cmp::Ordering| {
        (0..memory.len()).min_by(|&a, &b| f(&memory[a], &memory[b]).then(a.cmp(&b)))
    };
    picks.extend(by(&|a, b| cost(a).cmp(&cost(b))));
    picks.extend(by(&|a, b| cost(b).cmp(&cost(a))));
    picks.extend(
        (0..memory.len())
            .filter(|&i| memory[i].feasible)
            .min_by(|&a, &b| memory[a].metrics.nav_time_s.total_cmp(&memory[b].metrics.nav_time_s).then(a.cmp(&b))),
    );
    picks.extend(by(&|a, b| b.metrics.nav_time_s.total_cmp(&a.metrics.nav_time_s)));
    picks.extend((memory.len().saturating_sub(k_recent)..memory.len()).rev());
    let mut seen = BTreeSet::new();
    picks.retain(|i| seen.insert(*i));
    picks.truncate(REFERENCE_CAP);
    picks.sort_unstable();
    picks.into_iter().map(|i| memory[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Budget,
    Strategy,
    Exhausted,
}

/// Component invocations, logged in order for every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Propose,
    CacheLookup,
    Plan,
    Execute,
    Decipher,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationResult {
    pub strategy: String,
    pub seed: u64,
    pub budget: usize,
    /// Full history; also persisted in memory.jsonl.
    #[serde(skip)]
    pub records: Vec<MemoryRecord>,
    pub feasible: Vec<DesignPoint>,
    pub pareto_found: Vec<ObjectivePoint>,
    pub best: Option<MemoryRecord>,
    /// Evaluations that consumed budget.
    pub iterations_used: usize,
    pub cache_hits: usize,
    pub terminated_by: TerminatedBy,
    /// Set when the executor failed and the run stopped early.
    pub aborted: Option<String>,
    #[serde(skip)]
    pub step_log: Vec<(usize, Step)>,
    /// Real time spent; the only field that differs between identical runs.
    pub wall_clock_s: f64,
}

impl ExplorationResult {
    /// Points evaluated in order, without cache hits.
    pub fn evaluated_points(&self) -> Vec<DesignPoint> {
        self.records.iter().filter(|r| !r.cached).map(|r| r.point).collect()
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("executor failed at iteration {iteration}: {source}")]
    Executor {
        iteration: usize,
        source: ExecutorError,
        partial: Box<ExplorationResult>,
    },
    #[error("strategy error: {0}")]
    Strategy(#[from] SearchError),
    #[error("trace analysis failed: {0}")]
    Trace(#[from] TraceError),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("run directory: {0}")]
    Io(#[from] io::Error),
}

/// Loop settings.
#[derive(Debug, Clone)]
pub struct ExplorationSettings {
    pub budget: usize,
    pub seed: u64,
    /// Proposals allowed in total, cache hits included; bounds strategies
    /// that keep re-proposing known points.
    pub max_proposals: usize,
    pub run_dir: Option<PathBuf>,
}

impl ExplorationSettings {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            max_proposals: 2 * budget,
            run_dir: None,
        }
    }

    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }
}

/// Everything a run needs besides the strategy.
pub struct Explorer<'a> {
    pub scenario: &'a ScenarioSpec,
    pub space: &'a DesignSpace,
    pub executor: &'a dyn Executor,
    pub topology: Topology,
    pub trajectory_params: TrajectoryParams,
    pub settings: ExplorationSettings,
}

#[derive(Serialize)]
struct IterationReport<'a> {
    iteration: usize,
    point: &'a DesignPoint,
    metrics: &'a crate::design_space::Metrics,
    feasible: bool,
    cached: bool,
    report: &'a CombinedReport,
}

/// Write via a temporary file and rename, so readers never see partial files.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

impl<'a> Explorer<'a> {
    /// Explorer for the synthetic pipeline with default analysis settings.
    pub fn new(
        scenario: &'a ScenarioSpec,
        space: &'a DesignSpace,
        executor: &'a dyn Executor,
        settings: ExplorationSettings,
    ) -> Self {
        Self {
            scenario,
            space,
            executor,
            topology: pipeline_topology(),
            trajectory_params: TrajectoryParams::default(),
            settings,
        }
    }

    pub fn run(&self, strategy: &mut dyn Strategy) -> Result<ExplorationResult, OrchestratorError> {
        self.run_observed(strategy, &mut |_| {})
    }

    /// Like [`Explorer::run`], calling `observer` with the memory after
    /// every appended record.
    pub fn run_observed(
        &self,
        strategy: &mut dyn Strategy,
        observer: &mut dyn FnMut(&[MemoryRecord]),
    ) -> Result<ExplorationResult, OrchestratorError> {
        let started = Instant::now();
        let st = &self.settings;
        if st.budget == 0 {
            return Err(OrchestratorError::ZeroBudget);
        }
        let mut memory = match &st.run_dir {
            Some(dir) => {
                fs::create_dir_all(dir.join("reports"))?;
                MemoryStore::create(&dir.join("memory.jsonl"))?
            }
            None => MemoryStore::in_memory(),
        };
        let mut cache: HashMap<DesignPoint, (usize, CombinedReport)> = HashMap::new();
        let mut last_report: Option<CombinedReport> = None;
        let mut step_log = Vec::new();
        let mut evaluations = 0;
        let mut cache_hits = 0;
        let mut proposals = 0;
        let mut terminated_by = TerminatedBy::Budget;
        let mut aborted = None;
        let mut failure = None;

        while evaluations < st.budget && proposals < st.max_proposals {
            proposals += 1;
            let iteration = memory.records().len() + 1;
            step_log.push((iteration, Step::Propose));
            let ctx = ProposalContext {
                history: memory.records(),
                last_report: last_report.as_ref(),
                space: self.space,
                scenario: self.scenario,
            };
            let proposal = match strategy.propose(&ctx) {
                Ok(p) => p,
                Err(SearchError::Exhausted) => {
                    terminated_by = TerminatedBy::Exhausted;
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            if proposal.terminate {
                terminated_by = TerminatedBy::Strategy;
                break;
            }
            let point = self.space.canonical(&proposal.point).ok_or_else(|| {
                SearchError::InvalidProposal(format!("{} is outside the design space", proposal.point))
            })?;

            step_log.push((iteration, Step::CacheLookup));
            let (record, report) = if let Some((idx, report)) = cache.get(&point) {
                let prev = &memory.records()[*idx];
                cache_hits += 1;
                let record = MemoryRecord {
                    iteration,
                    rationale: proposal.rationale,
                    cached: true,
                    ..prev.clone()
                };
                (record, report.clone())
            } else {
                step_log.push((iteration, Step::Plan));
                let plan = build_command_plan(&point, self.scenario);
                step_log.push((iteration, Step::Execute));
                let out = match self.executor.execute(&plan, self.scenario, st.seed) {
                    Ok(o) => o,
                    Err(e) => {
                        aborted = Some(e.to_string());
                        failure = Some((iteration, e));
                        break;
                    }
                };
                step_log.push((iteration, Step::Decipher));
                let d = decipher(&point, &out, self.scenario, &self.topology, &self.trajectory_params)?;
                let report = combined_report(&d.performance, &d.verdict);
                evaluations += 1;
                let record = MemoryRecord {
                    iteration,
                    point,
                    metrics: d.metrics,
                    feasible: is_feasible(&d.metrics, &self.scenario.constraints),
                    bottleneck_flags: d.performance.bottleneck_flags.clone(),
                    verdict: VerdictSummary::from(&d.verdict),
                    rationale: proposal.rationale,
                    cached: false,
                };
                cache.insert(point, (iteration - 1, report.clone()));
                (record, report)
            };
            step_log.push((iteration, Step::Record));
            if let Some(dir) = &st.run_dir {
                let body = IterationReport {
                    iteration,
                    point: &record.point,
                    metrics: &record.metrics,
                    feasible: record.feasible,
                    cached: record.cached,
                    report: &report,
                };
                let json = serde_json::to_vec_pretty(&body).expect("report serializes");
                write_atomic(&dir.join(format!("reports/iter_{iteration}.json")), &json)?;
            }
            memory.append(record)?;
            observer(memory.records());
            last_report = Some(report);
        }

        let result = self.summarize(
            strategy.name(),
            memory.into_records(),
            evaluations,
            cache_hits,
            terminated_by,
            aborted,
            step_log,
            started.elapsed().as_secs_f64(),
        );
        if let Some(dir) = &st.run_dir {
            let json = serde_json::to_vec_pretty(&result).expect("result serializes");
            write_atomic(&dir.join("result.json"), &json)?;
        }
        match failure {
            Some((iteration, source)) => Err(OrchestratorError::Executor {
                iteration,
                source,
                partial: Box::new(result),
            }),
            None => Ok(result),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn summarize(
        &self,
        strategy: &str,
        records: Vec<MemoryRecord>,
        iterations_used: usize,
        cache_hits: usize,
        terminated_by: TerminatedBy,
        aborted: Option<String>,
        step_log: Vec<(usize, Step)>,
        wall_clock_s: f64,
    ) -> ExplorationResult {
        let fresh: Vec<&MemoryRecord> = records.iter().filter(|r| !r.cached).collect();
        let feasible: Vec<DesignPoint> = fresh.iter().filter(|r| r.feasible).map(|r| r.point).collect();
        let pareto_found = pareto_front(&feasible_objectives(
            fresh.iter().map(|r| (&r.point, &r.metrics)),
            &self.scenario.constraints,
        ));
        let best = fresh
            .iter()
            .filter(|r| r.feasible)
            .min_by(|a, b| {
                hardware_cost_milli(&a.point)
                    .cmp(&hardware_cost_milli(&b.point))
                    .then(a.metrics.nav_time_s.total_cmp(&b.metrics.nav_time_s))
                    .then(a.iteration.cmp(&b.iteration))
            })
            .map(|r| (*r).clone());
        ExplorationResult {
            strategy: strategy.to_string(),
            seed: self.settings.seed,
            budget: self.settings.budget,
            records,
            feasible,
            pareto_found,
            best,
            iterations_used,
            cache_hits,
            terminated_by,
            aborted,
            step_log,
            wall_clock_s,
        }
    }
}
