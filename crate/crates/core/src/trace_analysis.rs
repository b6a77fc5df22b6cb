//! Trace parsing and bottleneck detection.
//!
//! Traces are JSON lines, one event per line, keys in the order
//! `t_ns, kind, node, tid, topic`:
//!
//! ```text
//! {"t_ns":1000000000,"kind":"publish","node":"lidar_driver","tid":101,"topic":"/sensing/lidar/points"}
//! {"t_ns":1000000000,"kind":"nav_start","node":"nav_monitor","tid":100}
//! ```
//!
//! `kind` is one of `publish`, `subscribe_callback_start`,
//! `subscribe_callback_end`, `nav_start`, `nav_goal_reached`. The topic is
//! required for the first three and omitted for navigation events.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Topic whose publish rate is the control-command issue rate.
pub const CTRL_TOPIC: &str = "/control/command/control_cmd";

/// Rate windows shorter than this report 0 Hz.
pub const MIN_RATE_WINDOW_S: f64 = 0.5;

/// A node is frequency-bound when its fastest input outpaces its slowest by
/// more than this factor.
pub const FREQUENCY_RATIO_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Publish,
    SubscribeCallbackStart,
    SubscribeCallbackEnd,
    NavStart,
    NavGoalReached,
}

impl EventKind {
    fn needs_topic(self) -> bool {
        matches!(
            self,
            EventKind::Publish | EventKind::SubscribeCallbackStart | EventKind::SubscribeCallbackEnd
        )
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "publish" => EventKind::Publish,
            "subscribe_callback_start" => EventKind::SubscribeCallbackStart,
            "subscribe_callback_end" => EventKind::SubscribeCallbackEnd,
            "nav_start" => EventKind::NavStart,
            "nav_goal_reached" => EventKind::NavGoalReached,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_ns: u64,
    pub kind: EventKind,
    pub node: Arc<str>,
    pub tid: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<Arc<str>>,
}

impl TraceEvent {
    pub fn new(t_ns: u64, kind: EventKind, node: &Arc<str>, tid: u32, topic: Option<&Arc<str>>) -> Self {
        Self {
            t_ns,
            kind,
            node: Arc::clone(node),
            tid,
            topic: topic.map(Arc::clone),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown event kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("ambiguous trace: {count} `{kind}` events")]
    Ambiguous { kind: &'static str, count: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t_ns: u64,
    kind: String,
    node: String,
    tid: u32,
    #[serde(default)]
    topic: Option<String>,
}

/// Parse a JSON-lines trace. Blank lines and `#` comments are skipped; the
/// result is stably sorted by timestamp.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut interned: HashMap<String, Arc<str>> = HashMap::new();
    let mut intern = |s: String| -> Arc<str> {
        interned
            .entry(s)
            .or_insert_with_key(|k| Arc::from(k.as_str()))
            .clone()
    };
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(trimmed).map_err(|e| TraceError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let kind = EventKind::parse(&raw.kind).ok_or_else(|| TraceError::UnknownKind {
            line: line_no,
            kind: raw.kind.clone(),
        })?;
        if kind.needs_topic() && raw.topic.is_none() {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: format!("`{}` event without a topic", raw.kind),
            });
        }
        if raw.node.is_empty() {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: "empty node name".into(),
            });
        }
        events.push(TraceEvent {
            t_ns: raw.t_ns,
            kind,
            node: intern(raw.node),
            tid: raw.tid,
            topic: if kind.needs_topic() { raw.topic.map(&mut intern) } else { None },
        });
    }
    events.sort_by_key(|e| e.t_ns);
    Ok(events)
}

/// Serialize events in the trace line format.
pub fn write_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 96);
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

/// `(count − 1) / span` over sorted timestamps; 0 for fewer than two events
/// or spans shorter than [`MIN_RATE_WINDOW_S`].
pub fn rate_hz(sorted_t_ns: &[u64]) -> f64 {
    if sorted_t_ns.len() < 2 {
        return 0.0;
    }
    let span_s = (sorted_t_ns[sorted_t_ns.len() - 1] - sorted_t_ns[0]) as f64 * 1e-9;
    if span_s < MIN_RATE_WINDOW_S {
        return 0.0;
    }
    (sorted_t_ns.len() - 1) as f64 / span_s
}

fn times_by_topic(events: &[TraceEvent], kind: EventKind) -> BTreeMap<&str, Vec<u64>> {
    let mut m: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == kind) {
        if let Some(t) = &e.topic {
            m.entry(t).or_default().push(e.t_ns);
        }
    }
    m
}

/// Publish rate of every topic that has at least one publish event.
pub fn topic_publish_rates(events: &[TraceEvent]) -> BTreeMap<String, f64> {
    times_by_topic(events, EventKind::Publish)
        .into_iter()
        .map(|(t, ts)| (t.to_string(), rate_hz(&ts)))
        .collect()
}

/// Callback-start rate per (topic, subscribing node).
pub fn subscriber_rates(events: &[TraceEvent]) -> BTreeMap<(String, String), f64> {
    let mut m: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::SubscribeCallbackStart) {
        if let Some(t) = &e.topic {
            m.entry((t, &e.node)).or_default().push(e.t_ns);
        }
    }
    m.into_iter()
        .map(|((t, n), ts)| ((t.to_string(), n.to_string()), rate_hz(&ts)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallbackLatency {
    pub avg_callback_latency_sec: f64,
    pub max_callback_latency_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CallbackLatencies {
    pub per_node: BTreeMap<String, CallbackLatency>,
    /// Starts that never saw an end, plus ends that never saw a start.
    pub unmatched: usize,
}

/// Average and maximum callback duration per node. Starts and ends pair up
/// per (node, tid, topic), innermost first.
pub fn callback_latencies(events: &[TraceEvent]) -> CallbackLatencies {
    let mut open: HashMap<(&str, u32, &str), Vec<u64>> = HashMap::new();
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let mut unmatched = 0;
    for e in events {
        let Some(topic) = e.topic.as_deref() else { continue };
        let key = (&*e.node, e.tid, topic);
        match e.kind {
            EventKind::SubscribeCallbackStart => open.entry(key).or_default().push(e.t_ns),
            EventKind::SubscribeCallbackEnd => match open.get_mut(&key).and_then(Vec::pop) {
                Some(start) => {
                    let d = e.t_ns.saturating_sub(start) as f64 * 1e-9;
                    let s = sums.entry(&e.node).or_insert((0.0, 0.0, 0));
                    s.0 += d;
                    s.1 = s.1.max(d);
                    s.2 += 1;
                }
                None => unmatched += 1,
            },
            _ => {}
        }
    }
    unmatched += open.values().map(Vec::len).sum::<usize>();
    CallbackLatencies {
        per_node: sums
            .into_iter()
            .map(|(n, (sum, max, k))| {
                (
                    n.to_string(),
                    CallbackLatency {
                        avg_callback_latency_sec: sum / k as f64,
                        max_callback_latency_sec: max,
                    },
                )
            })
            .collect(),
        unmatched,
    }
}

/// Publish rate of the control-command topic (0 if it never publishes).
pub fn extract_ctrl_rate(events: &[TraceEvent]) -> f64 {
    let ts: Vec<u64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Publish && e.topic.as_deref() == Some(CTRL_TOPIC))
        .map(|e| e.t_ns)
        .collect();
    rate_hz(&ts)
}

/// Seconds from the start event to the goal event, if both occurred.
pub fn extract_nav_time(events: &[TraceEvent]) -> Result<Option<f64>, TraceError> {
    let pick = |kind: EventKind, name: &'static str| -> Result<Option<u64>, TraceError> {
        let ts: Vec<u64> = events.iter().filter(|e| e.kind == kind).map(|e| e.t_ns).collect();
        match ts.len() {
            0 => Ok(None),
            1 => Ok(Some(ts[0])),
            count => Err(TraceError::Ambiguous { kind: name, count }),
        }
    };
    let start = pick(EventKind::NavStart, "nav_start")?;
    let goal = pick(EventKind::NavGoalReached, "nav_goal_reached")?;
    Ok(match (start, goal) {
        (Some(s), Some(g)) if g >= s => Some((g - s) as f64 * 1e-9),
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueType {
    CpuBound,
    FrequencyBound,
}

impl IssueType {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueType::CpuBound => "cpu_bound",
            IssueType::FrequencyBound => "frequency_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectedIssue {
    /// A subscriber's callbacks fall behind its topic's publisher.
    CpuBound {
        node: String,
        topic: String,
        publisher_hz: f64,
        subscriber_hz: f64,
    },
    /// A node's inputs arrive at badly mismatched rates.
    FrequencyBound {
        node: String,
        slow_topic: String,
        slow_hz: f64,
        fast_topic: String,
        fast_hz: f64,
    },
}

impl DetectedIssue {
    pub fn issue_type(&self) -> IssueType {
        match self {
            DetectedIssue::CpuBound { .. } => IssueType::CpuBound,
            DetectedIssue::FrequencyBound { .. } => IssueType::FrequencyBound,
        }
    }

    pub fn node(&self) -> &str {
        match self {
            DetectedIssue::CpuBound { node, .. } | DetectedIssue::FrequencyBound { node, .. } => node,
        }
    }
}

/// Minimum subscriber/publisher ratio; stricter for faster publishers.
pub fn cpu_bound_threshold(publisher_hz: f64) -> f64 {
    if publisher_hz < 1.0 {
        0.7
    } else if publisher_hz < 10.0 {
        0.8
    } else {
        0.9
    }
}

/// Flag every (topic, subscriber) whose callback rate falls below the
/// threshold fraction of the topic's publish rate.
pub fn detect_cpu_bound(events: &[TraceEvent]) -> Vec<DetectedIssue> {
    let pubs = topic_publish_rates(events);
    let mut out = Vec::new();
    for ((topic, node), s) in subscriber_rates(events) {
        let Some(&p) = pubs.get(&topic) else { continue };
        if p <= 0.0 {
            continue;
        }
        if s / p < cpu_bound_threshold(p) {
            out.push(DetectedIssue::CpuBound {
                node,
                topic,
                publisher_hz: p,
                subscriber_hz: s,
            });
        }
    }
    out
}

/// Subscribed topics per node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Topology {
    pub node_inputs: BTreeMap<String, Vec<String>>,
}

/// Flag nodes whose non-silent inputs differ in rate by more than
/// [`FREQUENCY_RATIO_LIMIT`]. Inputs that never publish are skipped: a dead
/// input is a different failure than a slow one.
pub fn detect_frequency_bound(events: &[TraceEvent], topology: &Topology) -> Vec<DetectedIssue> {
    let rates = topic_publish_rates(events);
    let mut out = Vec::new();
    for (node, inputs) in &topology.node_inputs {
        let live: Vec<(&String, f64)> = inputs
            .iter()
            .filter_map(|t| rates.get(t).map(|&r| (t, r)))
            .filter(|&(_, r)| r > 0.0)
            .collect();
        if live.len() < 2 {
            continue;
        }
        // first of equal rates wins, following the topology's listing order
        let mut slow = live[0];
        let mut fast = live[0];
        for &c in &live[1..] {
            if c.1 < slow.1 {
                slow = c;
            }
            if c.1 > fast.1 {
                fast = c;
            }
        }
        if fast.1 / slow.1 > FREQUENCY_RATIO_LIMIT {
            out.push(DetectedIssue::FrequencyBound {
                node: node.clone(),
                slow_topic: slow.0.clone(),
                slow_hz: slow.1,
                fast_topic: fast.0.clone(),
                fast_hz: fast.1,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub node_callback_latencies: BTreeMap<String, CallbackLatency>,
    pub topic_publish_rates: BTreeMap<String, f64>,
    pub ctrl_rate_hz: f64,
    pub nav_time_s: Option<f64>,
    pub detected_issues: Vec<DetectedIssue>,
    pub bottleneck_flags: BTreeSet<IssueType>,
    pub unmatched_callbacks: usize,
}

/// Run every analysis over one trace.
pub fn build_report(events: &[TraceEvent], topology: &Topology) -> Result<PerformanceReport, TraceError> {
    let nav_time_s = extract_nav_time(events)?;
    let latencies = callback_latencies(events);
    let mut detected_issues = detect_cpu_bound(events);
    detected_issues.extend(detect_frequency_bound(events, topology));
    let bottleneck_flags = detected_issues.iter().map(DetectedIssue::issue_type).collect();
    Ok(PerformanceReport {
        node_callback_latencies: latencies.per_node,
        topic_publish_rates: topic_publish_rates(events),
        ctrl_rate_hz: extract_ctrl_rate(events),
        nav_time_s,
        detected_issues,
        bottleneck_flags,
        unmatched_callbacks: latencies.unmatched,
    })
}

impl PerformanceReport {
    /// Short text summary used in prompts and combined reports.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        match self.nav_time_s {
            Some(t) => {
                let _ = write!(s, "The navigation time is {t:.2} seconds, ");
            }
            None => s.push_str("The vehicle did not reach the goal, "),
        }
        let _ = write!(s, "and the control command issue rate is {:.3} Hz.", self.ctrl_rate_hz);
        if self.detected_issues.is_empty() {
            s.push_str(" No pipeline bottleneck was detected.");
        }
        for issue in &self.detected_issues {
            match issue {
                DetectedIssue::CpuBound {
                    node,
                    topic,
                    publisher_hz,
                    subscriber_hz,
                } => {
                    let _ = write!(
                        s,
                        " cpu_bound: {node} handles {topic} at {subscriber_hz:.3} Hz while it is published at {publisher_hz:.3} Hz."
                    );
                }
                DetectedIssue::FrequencyBound {
                    node,
                    slow_topic,
                    slow_hz,
                    fast_topic,
                    fast_hz,
                } => {
                    let _ = write!(
                        s,
                        " frequency_bound: {node} receives {slow_topic} at {slow_hz:.3} Hz but {fast_topic} at {fast_hz:.3} Hz."
                    );
                }
            }
        }
        s
    }
}
