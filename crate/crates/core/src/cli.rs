//! Command-line front end.
//!
//! Exit codes: 0 success, 1 unexpected failure (I/O, internal), 2 bad
//! config or input file, 3 executor failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ExplorationConfig, Overrides, Resolved};
use crate::design_space::{DesignPoint, Metrics};
use crate::orchestrator::{write_atomic, ExplorationResult, ExplorationSettings, Explorer, OrchestratorError, SyntheticExecutor};
use crate::pareto_eval::{emit_plot_data, feasible_objectives, first_hit_iteration, front_hits, pareto_front, ObjectivePoint, RunSummary};
use crate::search::{build_strategy, HttpBackend, LlmBackend, ScriptedBackend, STRATEGY_NAMES};
use crate::trace_analysis::{build_report, parse_trace, Topology};
use crate::vehicle_model::ground_truth;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_EXECUTOR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "avdse", version, about = "Design-space exploration for autonomous-driving compute configurations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one budgeted exploration and write its run directory.
    Explore(ExploreArgs),
    /// Evaluate every design point and write the ground truth.
    Exhaustive(ExhaustiveArgs),
    /// Run several strategies over several seeds and tabulate front hits.
    Compare(CompareArgs),
    /// Analyze a trace file and print the performance report.
    AnalyzeTrace(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    /// Exploration config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExhaustiveArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_value = "guided,ga,random")]
    pub strategies: Vec<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Seeds as a list (`1,2,5`) or an inclusive range (`1-20`).
    #[arg(long, default_value = "1-20")]
    pub seeds: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace in the line format written by the synthetic executor.
    pub trace: PathBuf,
    /// JSON topology: `{"node_inputs": {"node": ["/topic", ...]}}`.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match cli.command {
        Command::Explore(a) => cmd_explore(&a, out, err),
        Command::Exhaustive(a) => cmd_exhaustive(&a, out, err),
        Command::Compare(a) => cmd_compare(&a, out, err),
        Command::AnalyzeTrace(a) => cmd_analyze_trace(&a, out, err),
    }
}

fn load(path: &Path, o: &Overrides, err: &mut dyn Write) -> Result<Resolved, i32> {
    let resolved = ExplorationConfig::load(path).and_then(|mut c| {
        c.apply(o);
        c.validate()
    });
    resolved.map_err(|e: ConfigError| {
        let _ = writeln!(err, "error: {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn io_fail(err: &mut dyn Write, what: &str, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {what}: {e}");
    EXIT_FAILURE
}

fn backend_for(cfg: &ExplorationConfig) -> Result<Option<Box<dyn LlmBackend>>, String> {
    if cfg.strategy.name != "llm" {
        return Ok(None);
    }
    if let Some(script) = &cfg.llm.script {
        let b = ScriptedBackend::from_file(script).map_err(|e| format!("{}: {e}", script.display()))?;
        return Ok(Some(Box::new(b)));
    }
    if let Some(var) = &cfg.llm.endpoint_env {
        let b = HttpBackend::from_env(var, Duration::from_secs_f64(cfg.llm.timeout_s)).map_err(|e| e.to_string())?;
        return Ok(Some(Box::new(b)));
    }
    Ok(None)
}

/// Feasible truth front of an exhaustive evaluation.
pub fn truth_front(all: &[(DesignPoint, Metrics)], r: &Resolved) -> Vec<ObjectivePoint> {
    pareto_front(&feasible_objectives(all.iter().map(|(p, m)| (p, m)), &r.scenario.constraints))
}

/// Score one run against the truth front.
pub fn run_summary(result: &ExplorationResult, truth: &[ObjectivePoint]) -> RunSummary {
    let best = result.best.as_ref();
    RunSummary {
        strategy: result.strategy.clone(),
        seed: result.seed,
        budget: result.budget,
        front_size: truth.len(),
        hits: front_hits(&result.pareto_found, truth),
        first_hit_iteration: first_hit_iteration(&result.evaluated_points(), truth),
        best_cost: best.map(|r| r.metrics.hw_cost),
        best_nav_time_s: best.map(|r| r.metrics.nav_time_s),
        evaluations: result.iterations_used,
    }
}

pub fn cmd_explore(a: &ExploreArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let o = Overrides {
        strategy: a.strategy.clone(),
        budget: a.budget,
        seed: a.seed,
        out: a.out.clone(),
    };
    let r = match load(&a.config, &o, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let cfg = &r.config;
    let backend = match backend_for(cfg) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "error: llm backend: {e}");
            return EXIT_INPUT;
        }
    };
    let mut strategy = match build_strategy(&cfg.strategy.name, &cfg.strategy, cfg.seed, backend) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let dir = &cfg.output_dir;
    if let Err(e) = fs::create_dir_all(dir).and_then(|_| write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())) {
        return io_fail(err, &format!("cannot write {}", dir.display()), e);
    }
    let executor = SyntheticExecutor::new(r.space.clone());
    let explorer = Explorer::new(&r.scenario, &r.space, &executor, ExplorationSettings::new(cfg.budget, cfg.seed).with_run_dir(dir));
    let result = match explorer.run(strategy.as_mut()) {
        Ok(res) => res,
        Err(OrchestratorError::Executor { iteration, source, partial }) => {
            let _ = writeln!(
                err,
                "error: executor failed at iteration {iteration}: {source}; {} records kept in {}",
                partial.records.len(),
                dir.display()
            );
            return EXIT_EXECUTOR;
        }
        Err(e) => return io_fail(err, "exploration failed", e),
    };
    let truth = truth_front(&ground_truth(&r.space, &r.scenario, cfg.seed), &r);
    let s = run_summary(&result, &truth);
    let _ = writeln!(
        out,
        "{}: {} evaluations, {} cache hits, stopped by {:?}",
        result.strategy, result.iterations_used, result.cache_hits, result.terminated_by
    );
    match &result.best {
        Some(b) => {
            let _ = writeln!(
                out,
                "best feasible: {} cost {} nav {:.2} s ctrl {:.3} Hz",
                b.point, b.metrics.hw_cost, b.metrics.nav_time_s, b.metrics.ctrl_rate_hz
            );
        }
        None => {
            let _ = writeln!(out, "no feasible design found");
        }
    }
    let _ = writeln!(out, "truth-front hits: {}/{}", s.hits, s.front_size);
    let _ = writeln!(out, "run directory: {}", dir.display());
    EXIT_OK
}

pub fn cmd_exhaustive(a: &ExhaustiveArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let o = Overrides {
        seed: a.seed,
        out: a.out.clone(),
        ..Overrides::default()
    };
    let r = match load(&a.config, &o, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let all = ground_truth(&r.space, &r.scenario, r.config.seed);
    let front = truth_front(&all, &r);
    let dir = &r.config.output_dir;
    let csv = emit_plot_data(&all, &front, &[], &r.scenario.constraints);
    let json = serde_json::to_vec_pretty(&front).expect("front serializes");
    let written = fs::create_dir_all(dir)
        .and_then(|_| write_atomic(&dir.join("ground_truth.csv"), csv.as_bytes()))
        .and_then(|_| write_atomic(&dir.join("truth_front.json"), &json));
    if let Err(e) = written {
        return io_fail(err, &format!("cannot write {}", dir.display()), e);
    }
    let feasible = all.iter().filter(|(_, m)| crate::design_space::is_feasible(m, &r.scenario.constraints)).count();
    let _ = writeln!(out, "{} points evaluated, {feasible} feasible, {} on the front", all.len(), front.len());
    for o in &front {
        let _ = writeln!(out, "  {} cost {} nav {:.2} s", o.source, o.hw_cost, o.nav_time_s);
    }
    EXIT_OK
}

/// `1-20` or `1,2,5`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?,
            b.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?,
        );
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad seed `{x}`")))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyAggregate {
    pub strategy: String,
    pub runs: usize,
    pub mean_hits: f64,
    /// Runs without a hit count as `budget + 1`.
    pub mean_first_hit_iteration: f64,
    pub runs_with_hit: usize,
    pub mean_best_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub truth_front: Vec<ObjectivePoint>,
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<StrategyAggregate>,
}

/// Run every strategy for every seed against one ground truth.
pub fn compare(r: &Resolved, strategies: &[String], budget: usize, seeds: &[u64]) -> Result<Comparison, String> {
    let truth_seed = r.config.seed;
    let truth = truth_front(&ground_truth(&r.space, &r.scenario, truth_seed), r);
    let jobs: Vec<(&String, u64)> = strategies.iter().flat_map(|s| seeds.iter().map(move |&k| (s, k))).collect();
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .map(|(name, seed)| {
            let mut st = build_strategy(name, &r.config.strategy, *seed, None).map_err(|e| e.to_string())?;
            let executor = SyntheticExecutor::new(r.space.clone());
            // the model seed stays fixed so every run is scored against the same truth
            let res = Explorer::new(&r.scenario, &r.space, &executor, ExplorationSettings::new(budget, truth_seed))
                .run(st.as_mut())
                .map_err(|e| e.to_string())?;
            let mut s = run_summary(&res, &truth);
            s.seed = *seed;
            Ok(s)
        })
        .collect::<Result<_, String>>()?;
    let mut by: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for s in &runs {
        by.entry(s.strategy.as_str()).or_default().push(s);
    }
    let aggregate = strategies
        .iter()
        .filter_map(|name| {
            let rs = by.get(name.as_str())?;
            let n = rs.len() as f64;
            let costs: Vec<f64> = rs.iter().filter_map(|s| s.best_cost).collect();
            Some(StrategyAggregate {
                strategy: name.clone(),
                runs: rs.len(),
                mean_hits: rs.iter().map(|s| s.hits as f64).sum::<f64>() / n,
                mean_first_hit_iteration: rs
                    .iter()
                    .map(|s| s.first_hit_iteration.unwrap_or(budget + 1) as f64)
                    .sum::<f64>()
                    / n,
                runs_with_hit: rs.iter().filter(|s| s.first_hit_iteration.is_some()).count(),
                mean_best_cost: (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64),
            })
        })
        .collect();
    Ok(Comparison {
        budget,
        seeds: seeds.to_vec(),
        truth_front: truth,
        runs,
        aggregate,
    })
}

fn comparison_csv(c: &Comparison) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &c.runs {
        w.serialize(s).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let o = Overrides {
        budget: a.budget,
        out: a.out.clone(),
        ..Overrides::default()
    };
    let r = match load(&a.config, &o, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    for s in &a.strategies {
        if s == "llm" || !STRATEGY_NAMES.contains(&s.as_str()) {
            let _ = writeln!(err, "error: strategy `{s}` cannot be compared (use exhaustive, random, ga or guided)");
            return EXIT_INPUT;
        }
    }
    let seeds = match parse_seeds(&a.seeds) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: --seeds: {e}");
            return EXIT_INPUT;
        }
    };
    let c = match compare(&r, &a.strategies, r.config.budget, &seeds) {
        Ok(c) => c,
        Err(e) => return io_fail(err, "comparison failed", e),
    };
    let dir = &r.config.output_dir;
    let json = serde_json::to_vec_pretty(&c).expect("comparison serializes");
    let written = fs::create_dir_all(dir)
        .and_then(|_| write_atomic(&dir.join("comparison.json"), &json))
        .and_then(|_| write_atomic(&dir.join("comparison.csv"), comparison_csv(&c).as_bytes()));
    if let Err(e) = written {
        return io_fail(err, &format!("cannot write {}", dir.display()), e);
    }
    let _ = writeln!(out, "budget {}, {} seeds, truth front of {} points", c.budget, seeds.len(), c.truth_front.len());
    let _ = writeln!(out, "{:<12} {:>9} {:>15} {:>13}", "strategy", "mean hits", "mean first hit", "runs with hit");
    for g in &c.aggregate {
        let _ = writeln!(
            out,
            "{:<12} {:>9.2} {:>15.2} {:>13}",
            g.strategy, g.mean_hits, g.mean_first_hit_iteration, g.runs_with_hit
        );
    }
    EXIT_OK
}

pub fn cmd_analyze_trace(a: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match fs::read_to_string(&a.trace) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", a.trace.display());
            return EXIT_INPUT;
        }
    };
    let topology: Topology = match &a.topology {
        None => crate::vehicle_model::pipeline_topology(),
        Some(p) => match fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string())) {
            Ok(t) => t,
            Err(e) => {
                let _ = writeln!(err, "error: topology {}: {e}", p.display());
                return EXIT_INPUT;
            }
        },
    };
    let report = match parse_trace(&text).and_then(|ev| build_report(&ev, &topology)) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", a.trace.display());
            return EXIT_INPUT;
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(p) = &a.out {
        if let Err(e) = write_atomic(p, json.as_bytes()) {
            return io_fail(err, &format!("cannot write {}", p.display()), e);
        }
    }
    let _ = writeln!(out, "{json}");
    EXIT_OK
}
