//! Turning raw execution outputs into metrics and a combined report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::design_space::{hardware_cost, DesignPoint, Metrics};
use crate::scenario::ScenarioSpec;
use crate::trace_analysis::{build_report, PerformanceReport, Topology, TraceError};
use crate::trajectory_analysis::{analyze, NavStatus, TrajectoryParams, TrajectoryVerdict};
use crate::vehicle_model::SimulationOutput;

/// Both analyses of one run plus the metrics derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Deciphered {
    pub metrics: Metrics,
    pub performance: PerformanceReport,
    pub verdict: TrajectoryVerdict,
}

/// Analyze a run's trace and trajectory.
pub fn decipher(
    p: &DesignPoint,
    out: &SimulationOutput,
    s: &ScenarioSpec,
    topology: &Topology,
    params: &TrajectoryParams,
) -> Result<Deciphered, TraceError> {
    let performance = build_report(&out.trace, topology)?;
    let verdict = analyze(&out.actual_trajectory, s, params);
    let goal_reached = verdict.status == NavStatus::NavigationCompleted;
    let nav_time_s = match (goal_reached, performance.nav_time_s) {
        (true, Some(t)) => t,
        _ => s.timeout_s,
    };
    let metrics = Metrics {
        nav_time_s,
        deviation_score: verdict.deviation_score,
        ctrl_rate_hz: performance.ctrl_rate_hz,
        hw_cost: hardware_cost(p),
        goal_reached,
    };
    Ok(Deciphered {
        metrics,
        performance,
        verdict,
    })
}

/// Text for prompts and people, plus the structured analyses behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub text: String,
    pub performance: PerformanceReport,
    pub trajectory: TrajectoryVerdict,
}

/// Merge the trace and trajectory analyses: a metrics sentence, the
/// trajectory findings, and a JSON block with the structured fields.
pub fn combined_report(perf: &PerformanceReport, verdict: &TrajectoryVerdict) -> CombinedReport {
    let mut text = String::new();
    match (verdict.status, perf.nav_time_s) {
        (NavStatus::NavigationCompleted, Some(t)) => {
            let _ = writeln!(
                text,
                "The navigation time is {t:.2} seconds, and the control command issue rate is {:.3} Hz.",
                perf.ctrl_rate_hz
            );
        }
        _ => {
            let _ = writeln!(
                text,
                "Navigation was incomplete: the vehicle did not reach the goal. The control command issue rate is {:.3} Hz.",
                perf.ctrl_rate_hz
            );
        }
    }
    let _ = writeln!(text, "{}", verdict.narrative);
    let flags: Vec<&str> = perf.bottleneck_flags.iter().map(|f| f.as_str()).collect();
    let _ = writeln!(
        text,
        "bottleneck_flags: [{}]",
        flags.join(", ")
    );
    let structured = serde_json::json!({
        "node_callback_latencies": perf.node_callback_latencies,
        "topic_publish_rates": perf.topic_publish_rates,
        "detected_issues": perf.detected_issues,
        "bottleneck_flags": perf.bottleneck_flags,
        "navigation_status": verdict.status,
        "deviation_score": verdict.deviation_score,
        "quality_flags": verdict.quality_flags,
    });
    let _ = write!(
        text,
        "```json\n{}\n```\n",
        serde_json::to_string_pretty(&structured).expect("report serializes")
    );
    CombinedReport {
        text,
        performance: perf.clone(),
        trajectory: verdict.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_analysis::{DetectedIssue, IssueType};
    use std::collections::{BTreeMap, BTreeSet};

    fn perf(nav: Option<f64>, flags: &[IssueType]) -> PerformanceReport {
        PerformanceReport {
            node_callback_latencies: BTreeMap::new(),
            topic_publish_rates: BTreeMap::new(),
            ctrl_rate_hz: 7.838,
            nav_time_s: nav,
            detected_issues: flags
                .iter()
                .map(|_| DetectedIssue::FrequencyBound {
                    node: "n".into(),
                    slow_topic: "/a".into(),
                    slow_hz: 0.316,
                    fast_topic: "/b".into(),
                    fast_hz: 135.008,
                })
                .collect(),
            bottleneck_flags: flags.iter().copied().collect(),
            unmatched_callbacks: 0,
        }
    }

    fn verdict(done: bool) -> TrajectoryVerdict {
        TrajectoryVerdict {
            status: if done { NavStatus::NavigationCompleted } else { NavStatus::NavigationIncomplete },
            deviation_score: done.then_some(0.003205),
            quality_flags: BTreeSet::new(),
            narrative: if done {
                "Navigation Completed. The normalized deviation score is 0.003205.".into()
            } else {
                "Navigation Incomplete.".into()
            },
        }
    }

    #[test]
    fn completed_report() {
        let r = combined_report(&perf(Some(165.04), &[]), &verdict(true));
        assert!(r.text.starts_with(
            "The navigation time is 165.04 seconds, and the control command issue rate is 7.838 Hz."
        ));
        assert!(r.text.contains("0.003205"));
        assert!(r.text.contains("Navigation Completed"));
    }

    #[test]
    fn incomplete_report_has_no_score() {
        let r = combined_report(&perf(None, &[]), &verdict(false));
        assert!(r.text.contains("incomplete"));
        assert!(r.text.contains("\"deviation_score\": null"));
        assert_eq!(r.trajectory.deviation_score, None);
    }

    #[test]
    fn flags_listed() {
        let r = combined_report(&perf(Some(165.04), &[IssueType::FrequencyBound]), &verdict(true));
        assert!(r.text.contains("bottleneck_flags: [frequency_bound]"));
        assert!(r.text.contains("\"bottleneck_flags\": [\n    \"frequency_bound\"\n  ]"));
    }
}
