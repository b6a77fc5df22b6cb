//! Geometric trajectory analysis: goal check, deviation score, and
//! qualitative flags (zig-zag, jitter, lane departure risk).

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::scenario::{ideal_trajectory, Point2D, Polyline, ScenarioSpec};

/// Thresholds for the trajectory checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub goal_tolerance_m: f64,
    pub lane_width_m: f64,
    /// Heading-sign reversals per 100 m above which motion is zig-zag.
    pub zigzag_reversals_per_100m: f64,
    /// Mean absolute heading change (rad/m) above which motion is jittery.
    pub jitter_rad_per_m: f64,
    /// Turning angles smaller than this are treated as straight.
    pub dead_band_rad: f64,
    pub resample_points: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            goal_tolerance_m: 2.0,
            lane_width_m: 4.0,
            zigzag_reversals_per_100m: 4.0,
            jitter_rad_per_m: 0.15,
            dead_band_rad: 0.01,
            resample_points: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    ZigZag,
    Jitter,
    LaneDepartureRisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavStatus {
    NavigationCompleted,
    NavigationIncomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryVerdict {
    pub status: NavStatus,
    pub deviation_score: Option<f64>,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub narrative: String,
}

/// Whether the final point is within `tolerance_m` of the goal (inclusive).
pub fn goal_reached(actual: &[Point2D], goal: &Point2D, tolerance_m: f64) -> bool {
    actual.last().is_some_and(|p| p.dist(goal) <= tolerance_m)
}

/// Mean pointwise distance after uniform arc-length resampling to `m`
/// points, divided by `d_norm` and clamped to [0, 1].
pub fn deviation_score(actual: &Polyline, ideal: &Polyline, d_norm: f64, m: usize) -> f64 {
    let a = actual.resample(m);
    let b = ideal.resample(m);
    let mean = a.iter().zip(&b).map(|(p, q)| p.dist(q)).sum::<f64>() / m as f64;
    (mean / d_norm).clamp(0.0, 1.0)
}

fn turning_angles(pts: &[Point2D]) -> Vec<f64> {
    pts.windows(3)
        .map(|w| {
            let h0 = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            let h1 = (w[2].y - w[1].y).atan2(w[2].x - w[1].x);
            let mut d = h1 - h0;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d <= -PI {
                d += 2.0 * PI;
            }
            d
        })
        .collect()
}

/// Sign changes among the turning angles outside the dead-band.
pub fn heading_reversals(pts: &[Point2D], dead_band_rad: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for a in turning_angles(pts) {
        if a.abs() < dead_band_rad {
            continue;
        }
        if last != 0.0 && a.signum() != last.signum() {
            count += 1;
        }
        last = a;
    }
    count
}

/// Flags describing the shape of `actual` relative to `ideal`.
pub fn quality_flags(actual: &Polyline, ideal: &Polyline, params: &TrajectoryParams) -> BTreeSet<QualityFlag> {
    let mut flags = BTreeSet::new();
    let pts = actual.resample(params.resample_points);
    let length = actual.len();
    let per_100m = heading_reversals(&pts, params.dead_band_rad) as f64 / (length / 100.0);
    if per_100m > params.zigzag_reversals_per_100m {
        flags.insert(QualityFlag::ZigZag);
    }
    let total_turn: f64 = turning_angles(&pts)
        .iter()
        .filter(|a| a.abs() >= params.dead_band_rad)
        .map(|a| a.abs())
        .sum();
    if total_turn / length > params.jitter_rad_per_m {
        flags.insert(QualityFlag::Jitter);
    }
    let max_offset = pts
        .iter()
        .map(|p| ideal.project(p).distance)
        .fold(0.0, f64::max);
    if max_offset > params.lane_width_m / 2.0 {
        flags.insert(QualityFlag::LaneDepartureRisk);
    }
    flags
}

fn narrative(status: NavStatus, score: Option<f64>, flags: &BTreeSet<QualityFlag>) -> String {
    let head = match (status, score) {
        (NavStatus::NavigationCompleted, Some(s)) => {
            format!("Navigation Completed. The normalized deviation score is {s:.6}.")
        }
        _ => "Navigation Incomplete. The vehicle did not reach the goal position.".to_string(),
    };
    let body = if flags.is_empty() {
        "The path is stable and follows the lane without zig-zag or jitter.".to_string()
    } else {
        let names: Vec<&str> = flags
            .iter()
            .map(|f| match f {
                QualityFlag::ZigZag => "zig-zag motion",
                QualityFlag::Jitter => "jitter",
                QualityFlag::LaneDepartureRisk => "a risk of leaving the lane",
            })
            .collect();
        format!("The path shows {}.", names.join(" and "))
    };
    format!("{head} {body}")
}

/// Goal check, deviation against the ideal path, and quality flags.
pub fn analyze(actual: &[Point2D], s: &ScenarioSpec, params: &TrajectoryParams) -> TrajectoryVerdict {
    let reached = goal_reached(actual, &s.goal, params.goal_tolerance_m);
    let status = if reached {
        NavStatus::NavigationCompleted
    } else {
        NavStatus::NavigationIncomplete
    };
    let line = Polyline::from_points_dedup(actual.iter().copied()).ok();
    let ideal = ideal_trajectory(s).ok();
    let deviation_score = match (reached, &line, &ideal) {
        (true, Some(a), Some(i)) => Some(deviation_score(a, i, s.map_diagonal_m(), params.resample_points)),
        // an actual path that collapses to the goal point is a perfect run
        (true, None, Some(_)) => Some(0.0),
        _ => None,
    };
    let quality_flags = match (&line, &ideal) {
        (Some(a), Some(i)) if a.points().len() >= 3 => quality_flags(a, i, params),
        _ => BTreeSet::new(),
    };
    TrajectoryVerdict {
        narrative: narrative(status, deviation_score, &quality_flags),
        status,
        deviation_score,
        quality_flags,
    }
}
