//! End-to-end behavior of the exploration loop.

use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use avdse::design_space::{DesignPoint, DesignSpace};
use avdse::orchestrator::{
    CommandPlan, ExecutorError, ExplorationSettings, Explorer, Executor, MemoryRecord, MemoryStore, OrchestratorError, Step,
    SyntheticExecutor, TerminatedBy,
};
use avdse::scenario::{robotaxi, ScenarioSpec};
use avdse::search::{
    ExhaustiveStrategy, GuidedParams, GuidedStrategy, Proposal, ProposalContext, RandomStrategy, SearchError, Strategy,
};
use avdse::vehicle_model::SimulationOutput;

/// Replays a fixed list of points, then asks to stop.
struct Scripted(Vec<DesignPoint>);

impl Strategy for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let i = ctx.history.len();
        Ok(match self.0.get(i) {
            Some(p) => Proposal::next(*p, format!("scripted step {}", i + 1)),
            None => Proposal {
                point: self.0[0],
                rationale: "done".into(),
                terminate: true,
            },
        })
    }
}

/// Counts executions and fails on the n-th one.
struct Flaky {
    inner: SyntheticExecutor,
    calls: AtomicUsize,
    fail_on: usize,
}

impl Executor for Flaky {
    fn execute(&self, plan: &CommandPlan, s: &ScenarioSpec, seed: u64) -> Result<SimulationOutput, ExecutorError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if n == self.fail_on {
            return Err(ExecutorError::Failed("simulator crashed".into()));
        }
        self.inner.execute(plan, s, seed)
    }
}

fn setup() -> (ScenarioSpec, DesignSpace) {
    (robotaxi(), DesignSpace::default())
}

#[test]
fn memory_file_is_append_only() {
    let (s, space) = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let exec = SyntheticExecutor::new(space.clone());
    let explorer = Explorer::new(&s, &space, &exec, ExplorationSettings::new(6, 2).with_run_dir(dir.path()));
    let mut prefixes: Vec<(usize, Vec<u8>)> = Vec::new();
    let mut st = RandomStrategy::new(2);
    explorer
        .run_observed(&mut st, &mut |recs: &[MemoryRecord]| {
            let bytes = std::fs::read(&path).unwrap();
            prefixes.push((recs.len(), Sha256::digest(&bytes).to_vec()));
        })
        .unwrap();
    let final_bytes = std::fs::read(&path).unwrap();
    let lines: Vec<&[u8]> = final_bytes.split_inclusive(|&b| b == b'\n').collect();
    assert_eq!(lines.len(), 6);
    // every snapshot taken during the run is a prefix of the final file
    for (n, digest) in &prefixes {
        let prefix: Vec<u8> = lines[..*n].concat();
        assert_eq!(&Sha256::digest(&prefix).to_vec(), digest, "snapshot after {n} records was rewritten");
    }
    let reloaded = MemoryStore::load(&path).unwrap();
    assert_eq!(reloaded.len(), 6);
    assert!(reloaded.windows(2).all(|w| w[0].iteration < w[1].iteration));
}

#[test]
fn repeated_points_are_served_from_cache() {
    let (s, space) = setup();
    let a = DesignPoint::new(12, 1.5, 7);
    let b = DesignPoint::new(20, 2.1, 14);
    let exec = Flaky {
        inner: SyntheticExecutor::new(space.clone()),
        calls: AtomicUsize::new(0),
        fail_on: usize::MAX,
    };
    let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(3, 1))
        .run(&mut Scripted(vec![a, b, a, b, a]))
        .unwrap();
    assert_eq!(exec.calls.load(Ordering::SeqCst), 2);
    assert_eq!(res.iterations_used, 2);
    assert_eq!(res.cache_hits, 3);
    assert_eq!(res.terminated_by, TerminatedBy::Strategy);
    let first_a = &res.records[0];
    for r in res.records.iter().filter(|r| r.point == a) {
        assert_eq!(r.metrics, first_a.metrics);
        assert_eq!(r.bottleneck_flags, first_a.bottleneck_flags);
    }
    assert!(res.records[2].cached && !res.records[0].cached);
}

#[test]
fn proposal_cap_stops_endless_repeats() {
    let (s, space) = setup();
    let a = DesignPoint::new(12, 1.5, 7);
    let exec = SyntheticExecutor::new(space.clone());
    let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(4, 1))
        .run(&mut Scripted(vec![a; 50]))
        .unwrap();
    assert_eq!(res.iterations_used, 1);
    assert_eq!(res.records.len(), 8);
    assert_eq!(res.terminated_by, TerminatedBy::Budget);
}

#[test]
fn components_run_in_round_robin_order() {
    let (s, space) = setup();
    let exec = SyntheticExecutor::new(space.clone());
    let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(4, 1)).run(&mut ExhaustiveStrategy).unwrap();
    let fresh = [Step::Propose, Step::CacheLookup, Step::Plan, Step::Execute, Step::Decipher, Step::Record];
    let expected: Vec<(usize, Step)> = (1..=4).flat_map(|i| fresh.iter().map(move |s| (i, *s))).collect();
    assert_eq!(res.step_log, expected);
    assert_eq!(res.terminated_by, TerminatedBy::Budget);
}

#[test]
fn budget_bounds_evaluations() {
    let (s, space) = setup();
    let exec = SyntheticExecutor::new(space.clone());
    for budget in [1, 5, 15] {
        let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(budget, 3))
            .run(&mut RandomStrategy::new(3))
            .unwrap();
        assert_eq!(res.iterations_used, budget);
        assert_eq!(res.evaluated_points().len(), budget);
    }
    let zero = Explorer::new(&s, &space, &exec, ExplorationSettings::new(0, 3)).run(&mut ExhaustiveStrategy);
    assert!(matches!(zero, Err(OrchestratorError::ZeroBudget)));
}

#[test]
fn exhausting_a_small_space_stops_the_run() {
    let s = robotaxi();
    let space = DesignSpace::new(vec![8, 16], vec![2.1], vec![14]).unwrap();
    let exec = SyntheticExecutor::new(space.clone());
    let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(10, 1)).run(&mut ExhaustiveStrategy).unwrap();
    assert_eq!(res.iterations_used, 2);
    assert_eq!(res.terminated_by, TerminatedBy::Exhausted);
}

#[test]
fn executor_failure_keeps_partial_results() {
    let (s, space) = setup();
    let dir = tempfile::tempdir().unwrap();
    let exec = Flaky {
        inner: SyntheticExecutor::new(space.clone()),
        calls: AtomicUsize::new(0),
        fail_on: 3,
    };
    let err = Explorer::new(&s, &space, &exec, ExplorationSettings::new(5, 1).with_run_dir(dir.path()))
        .run(&mut ExhaustiveStrategy)
        .unwrap_err();
    match err {
        OrchestratorError::Executor { iteration, partial, .. } => {
            assert_eq!(iteration, 3);
            assert_eq!(partial.records.len(), 2);
            assert!(partial.aborted.as_deref().unwrap().contains("simulator crashed"));
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(MemoryStore::load(&dir.path().join("memory.jsonl")).unwrap().len(), 2);
    assert!(dir.path().join("result.json").exists());
}

#[test]
fn run_directory_layout() {
    let (s, space) = setup();
    let dir = tempfile::tempdir().unwrap();
    let exec = SyntheticExecutor::new(space.clone());
    let mut st = GuidedStrategy::new(
        GuidedParams {
            start: Some(DesignPoint::new(4, 1.2, 14)),
            ..GuidedParams::default()
        },
        1,
    );
    let res = Explorer::new(&s, &space, &exec, ExplorationSettings::new(3, 1).with_run_dir(dir.path()))
        .run(&mut st)
        .unwrap();
    for i in 1..=res.records.len() {
        let body: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("reports/iter_{i}.json"))).unwrap()).unwrap();
        assert_eq!(body["iteration"], i);
        assert!(body["report"]["text"].as_str().unwrap().contains("bottleneck_flags"));
    }
    let result: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["strategy"], "guided");
    assert!(result.get("wall_clock_s").is_some());
    // the first point misses the constraints, so the guided rules climb
    assert!(!res.records[0].feasible);
    assert_eq!(res.records[1].point, DesignPoint::new(8, 1.2, 14));
}
