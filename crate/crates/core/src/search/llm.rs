//! Text-completion adapter: prompt assembly, response parsing, and a
//! retry-then-fallback contract around an injected backend.
//!
//! Each proposal is one single-turn exchange. The system text describes the
//! objectives, the axis sets and the answer format; the instruction carries
//! the last evaluated point, its analysis, and curated reference records.
//!
//! A response that yields no design point is retried once with
//! [`FORMAT_REMINDER`] appended. A second failure hands the proposal to the
//! guided rules.
//!
//! # HTTP wire format
//!
//! [`HttpBackend`] POSTs `{"system": "...", "prompt": "..."}` as JSON to
//! the URL held in the configured environment variable and expects
//! `{"completion": "..."}` back.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GuidedStrategy, Proposal, ProposalContext, SearchError, Strategy};
use crate::design_space::{hardware_cost, DesignPoint, DesignSpace};
use crate::orchestrator::{select_references, CombinedReport, MemoryRecord, DEFAULT_K_RECENT};
use crate::scenario::{ScenarioSpec, Task};

/// Appended to the instruction when the first answer could not be parsed.
pub const FORMAT_REMINDER: &str = "\n\nYour previous answer did not contain a design point I could read. \
End your answer with one line of exactly this form:\n\
Next design point: (<cores> cores, <GHz> GHz, <Hz> Hz LiDAR frequency)";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("scripted backend has no responses left")]
    Exhausted,
    #[error("environment variable `{0}` is not set")]
    MissingEndpoint(String),
    #[error("backend request failed: {0}")]
    Transport(String),
    #[error("cannot read transcript: {0}")]
    Io(#[from] std::io::Error),
}

/// A single-turn text-completion service.
pub trait LlmBackend: Send {
    fn complete(&mut self, system: &str, prompt: &str) -> Result<String, BackendError>;
}

/// Replays canned responses in order and records the prompts it was sent.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: VecDeque<String>,
    pub prompts: Vec<(String, String)>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            prompts: Vec::new(),
        }
    }

    /// Responses separated by lines containing only `---`.
    pub fn from_transcript(text: &str) -> Self {
        let mut out = Vec::new();
        let mut cur = String::new();
        for line in text.lines() {
            if line.trim() == "---" {
                out.push(std::mem::take(&mut cur).trim().to_string());
            } else {
                cur.push_str(line);
                cur.push('\n');
            }
        }
        if !cur.trim().is_empty() {
            out.push(cur.trim().to_string());
        }
        Self::new(out)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_transcript(&std::fs::read_to_string(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.responses.len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&mut self, system: &str, prompt: &str) -> Result<String, BackendError> {
        self.prompts.push((system.to_string(), prompt.to_string()));
        self.responses.pop_front().ok_or(BackendError::Exhausted)
    }
}

/// JSON-over-HTTP completion endpoint.
pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    system: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }

    /// Endpoint URL read from the environment variable `var`.
    pub fn from_env(var: &str, timeout: Duration) -> Result<Self, BackendError> {
        let url = std::env::var(var).map_err(|_| BackendError::MissingEndpoint(var.to_string()))?;
        Ok(Self::new(url, timeout))
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&mut self, system: &str, prompt: &str) -> Result<String, BackendError> {
        let resp: CompletionResponse = self
            .agent
            .post(&self.url)
            .send_json(CompletionRequest { system, prompt })
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(resp.completion)
    }
}

/// `(16 cores, 1.8 GHz, 14 Hz LiDAR frequency)`
pub fn render_point(p: &DesignPoint) -> String {
    format!("({} cores, {:?} GHz, {} Hz LiDAR frequency)", p.cores, p.core_frequency_ghz, p.lidar_hz)
}

fn render_set<T: std::fmt::Debug>(xs: &[T]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
    format!("{{{}}}", items.join(", "))
}

fn render_cores(xs: &[u32]) -> String {
    let contiguous = xs.windows(2).all(|w| w[1] == w[0] + 1);
    match (xs.first(), xs.last()) {
        (Some(a), Some(b)) if contiguous && xs.len() > 3 => format!("{{{a} .. {b}}}"),
        _ => render_set(xs),
    }
}

fn reference_line(i: usize, r: &MemoryRecord) -> String {
    let m = &r.metrics;
    let mut s = format!(
        "# Reference design point {i}: number_of_cores = {}, core_frequency = {:?}, lidar_frequency = {} → ",
        r.point.cores, r.point.core_frequency_ghz, r.point.lidar_hz
    );
    if m.goal_reached {
        let _ = write!(s, "navigation_time = {:.2}", m.nav_time_s);
    } else {
        s.push_str("navigation_time = not reached");
    }
    match m.deviation_score {
        Some(d) => {
            let _ = write!(s, ", deviation_score = {d:.6}");
        }
        None => s.push_str(", deviation_score = n/a"),
    }
    let _ = write!(s, ", control_rate = {:.3}, hardware_cost = {}", m.ctrl_rate_hz, hardware_cost(&r.point));
    s
}

const REQUEST: &str = "Propose the next design point to simulate and explain your choice.";

/// System text and instruction for the next proposal.
pub fn assemble_prompts(
    scenario: &ScenarioSpec,
    space: &DesignSpace,
    history: &[MemoryRecord],
    last_report: Option<&CombinedReport>,
    k_recent: usize,
) -> (String, String) {
    let task = match scenario.task {
        Task::LaneDriving => "lane driving",
        Task::AutomatedValetParking => "automated valet parking",
    };
    let c = &scenario.constraints;
    let system = format!(
        "You pick compute configurations for an autonomous vehicle, one simulation at a time.\n\
         \n\
         Scenario: {task} on map `{}` at a cruise speed of {} km/h.\n\
         Goal: find the cheapest configuration (hardware cost = cores × GHz) whose navigation time is at most {} s \
         and whose control command rate exceeds {} Hz. Among configurations that qualify, shorter navigation time is better.\n\
         \n\
         Configuration axes:\n\
         - number_of_cores ∈ {}\n\
         - core_frequency (GHz) ∈ {}\n\
         - lidar_frequency (Hz) ∈ {}\n\
         \n\
         After every simulation you receive the configuration that was run, its measured performance, \
         an analysis of the trace and trajectory, and reference points from earlier runs.\n\
         \n\
         Answer format: reason briefly, then finish with a single line\n\
         Next design point: (<cores> cores, <GHz> GHz, <Hz> Hz LiDAR frequency)",
        scenario.map_id,
        scenario.cruise_speed_kmh,
        c.max_nav_time_s,
        c.min_ctrl_rate_hz,
        render_cores(space.core_counts()),
        render_set(space.frequencies_ghz()),
        render_set(space.lidar_rates_hz()),
    );

    let mut ins = String::new();
    if let Some(last) = history.last() {
        let m = &last.metrics;
        let _ = writeln!(ins, "Design point just simulated:");
        let _ = writeln!(ins, "- number_of_cores: {}", last.point.cores);
        let _ = writeln!(ins, "- core_frequency: {:?} GHz", last.point.core_frequency_ghz);
        let _ = writeln!(ins, "- lidar_frequency: {} Hz", last.point.lidar_hz);
        let _ = writeln!(ins);
        let _ = writeln!(ins, "Measured performance:");
        if m.goal_reached {
            let _ = writeln!(ins, "- navigation time: {:.2} seconds", m.nav_time_s);
        } else {
            let _ = writeln!(ins, "- navigation time: goal not reached within {} seconds", scenario.timeout_s);
        }
        match m.deviation_score {
            Some(d) => {
                let _ = writeln!(ins, "- deviation score: {d:.6}");
            }
            None => {
                let _ = writeln!(ins, "- deviation score: n/a");
            }
        }
        let _ = writeln!(ins, "- control command rate: {:.3} Hz", m.ctrl_rate_hz);
        let _ = writeln!(ins, "- hardware cost: {}", hardware_cost(&last.point));
        let flags: Vec<&str> = last.bottleneck_flags.iter().map(|f| f.as_str()).collect();
        let _ = writeln!(ins, "- bottleneck flags: [{}]", flags.join(", "));
        let _ = writeln!(ins);
        if let Some(r) = last_report {
            let _ = writeln!(ins, "Analysis:");
            let _ = writeln!(ins, "{}", r.text.trim_end());
            let _ = writeln!(ins);
        }
    }
    let _ = writeln!(ins, "Reference design points:");
    for (i, r) in select_references(history, k_recent).iter().enumerate() {
        let _ = writeln!(ins, "{}", reference_line(i + 1, r));
    }
    let _ = writeln!(ins);
    ins.push_str(REQUEST);
    (system, ins)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no design point found in the response")]
    NoDesignPoint,
}

const NUM: &str = r"(\d+(?:\.\d+)?)";

static TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)\(\s*{NUM}\s*cores?\s*,\s*{NUM}\s*GHz\s*,\s*{NUM}\s*Hz[^)]*\)")).unwrap()
});
static CORES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)number[_ ]of[_ ]cores\s*[=:]\s*{NUM}")).unwrap());
static FREQ: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)core[_ ]frequency\s*[=:]\s*{NUM}")).unwrap());
static LIDAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)lidar[_ ]frequency\s*[=:]\s*{NUM}")).unwrap());
static BARE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\(\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*\)")).unwrap());

fn numbers(caps: &[Option<regex::Captures<'_>>; 3]) -> Option<[f64; 3]> {
    let mut out = [0.0; 3];
    for (o, c) in out.iter_mut().zip(caps) {
        *o = c.as_ref()?.get(1)?.as_str().parse().ok()?;
    }
    Some(out)
}

/// Extract a design point from free text and snap it onto the space.
///
/// Accepted forms, tried in order: a `(16 cores, 1.8 GHz, 14 Hz ...)`
/// tuple, labeled `number_of_cores = ..., core_frequency = ...,
/// lidar_frequency = ...` fields, and a bare `(16, 1.8, 14)` triple.
pub fn parse_llm_proposal(text: &str, space: &DesignSpace) -> Result<Proposal, ParseError> {
    let v = if let Some(c) = TUPLE.captures(text) {
        [&c[1], &c[2], &c[3]].map(|s| s.parse::<f64>().unwrap_or(f64::NAN))
    } else if let Some(v) = numbers(&[CORES.captures(text), FREQ.captures(text), LIDAR.captures(text)]) {
        v
    } else if let Some(c) = BARE.captures(text) {
        [&c[1], &c[2], &c[3]].map(|s| s.parse::<f64>().unwrap_or(f64::NAN))
    } else {
        return Err(ParseError::NoDesignPoint);
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ParseError::NoDesignPoint);
    }
    Ok(Proposal::next(space.clamp(v[0], v[1], v[2]), text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmParams {
    /// Most recent records always included among the references.
    pub k_recent: usize,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            k_recent: DEFAULT_K_RECENT,
        }
    }
}

/// How a proposal was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeOutcome {
    Parsed,
    ParsedAfterRetry,
    Fallback,
}

#[derive(Debug, Clone, Serialize)]
pub struct Exchange {
    pub prompt: String,
    pub responses: Vec<String>,
    pub outcome: ExchangeOutcome,
}

pub struct LlmStrategy {
    backend: Box<dyn LlmBackend>,
    params: LlmParams,
    fallback: GuidedStrategy,
    pub retries: usize,
    pub fallbacks: usize,
    pub transcript: Vec<Exchange>,
}

impl LlmStrategy {
    pub fn new(backend: Box<dyn LlmBackend>, params: LlmParams, fallback: GuidedStrategy) -> Self {
        Self {
            backend,
            params,
            fallback,
            retries: 0,
            fallbacks: 0,
            transcript: Vec::new(),
        }
    }

    fn ask(&mut self, system: &str, prompt: &str, responses: &mut Vec<String>, space: &DesignSpace) -> Option<Proposal> {
        let text = self.backend.complete(system, prompt).ok()?;
        let parsed = parse_llm_proposal(&text, space).ok();
        responses.push(text);
        parsed
    }
}

impl Strategy for LlmStrategy {
    fn name(&self) -> &str {
        "llm"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let (system, prompt) = assemble_prompts(ctx.scenario, ctx.space, ctx.history, ctx.last_report, self.params.k_recent);
        let mut responses = Vec::new();
        let mut outcome = ExchangeOutcome::Parsed;
        let mut got = self.ask(&system, &prompt, &mut responses, ctx.space);
        if got.is_none() {
            self.retries += 1;
            outcome = ExchangeOutcome::ParsedAfterRetry;
            got = self.ask(&system, &format!("{prompt}{FORMAT_REMINDER}"), &mut responses, ctx.space);
        }
        let proposal = match got {
            Some(p) => p,
            None => {
                self.fallbacks += 1;
                outcome = ExchangeOutcome::Fallback;
                let mut p = self.fallback.propose(ctx)?;
                p.rationale = format!("no readable answer after a retry; guided rules: {}", p.rationale);
                p
            }
        };
        self.transcript.push(Exchange { prompt, responses, outcome });
        Ok(proposal)
    }
}
