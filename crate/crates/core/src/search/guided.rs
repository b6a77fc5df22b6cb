//! Rule-based, bottleneck-guided search.
//!
//! The rules look at the last evaluated point and fire in order:
//!
//! 1. **Frequency mismatch.** A frequency-bound node without a CPU-bound
//!    stage means the LiDAR feeds the pipeline faster than the slow branch
//!    can use, so lower the LiDAR rate.
//! 2. **Climb.** An infeasible point needs more compute: step the core
//!    count up by `core_step` indices and the frequency by `frequency_step`,
//!    alternating axes between firings.
//! 3. **Trim.** A feasible point is a chance to save cost. Candidate moves
//!    are one core step down, one frequency step down, and a rebalance to
//!    the next frequency with the largest core count that is still cheaper.
//!    Moves predicted to break the constraints are dropped; the rest are
//!    ranked by capacity kept per unit of cost.
//! 4. **Stop.** With nothing admissible left, re-propose the best feasible
//!    point found and terminate.
//!
//! Feasibility of an unevaluated point is predicted from its nearest
//! evaluated neighbour, scaling the neighbour's control rate by the ratio
//! of Amdahl capacities.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Proposal, ProposalContext, SearchError, Strategy};
use crate::design_space::{enumerate, hardware_cost_milli, Axis, Constraints, DesignPoint, DesignSpace};
use crate::orchestrator::MemoryRecord;
use crate::rng::{substream, Rng};
use crate::trace_analysis::IssueType;
use crate::vehicle_model::amdahl_speedup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidedParams {
    pub core_step: usize,
    pub frequency_step: usize,
    pub assumed_parallel_fraction: f64,
    /// First point to evaluate; drawn at random when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<DesignPoint>,
}

impl Default for GuidedParams {
    fn default() -> Self {
        Self {
            core_step: 4,
            frequency_step: 1,
            assumed_parallel_fraction: 0.9,
            start: None,
        }
    }
}

impl GuidedParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.core_step == 0 || self.frequency_step == 0 {
            return Err("guided step sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.assumed_parallel_fraction) {
            return Err("guided.assumed_parallel_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

fn capacity(p: &DesignPoint, frac: f64) -> f64 {
    amdahl_speedup(p.cores, frac) * p.core_frequency_ghz
}

/// Predicted (nav time, control rate) of `c`, or `None` when no evaluated
/// point reached the goal.
fn predict(c: &DesignPoint, history: &[MemoryRecord], space: &DesignSpace, frac: f64) -> Option<(f64, f64)> {
    let ci = space.index_of(c)?;
    let dims = space.dims();
    let dist = |p: &DesignPoint| -> f64 {
        let pi = space.index_of(p).expect("history points are members");
        (0..3)
            .map(|k| {
                let span = dims[k].saturating_sub(1).max(1) as f64;
                ((ci[k] as f64 - pi[k] as f64) / span).powi(2)
            })
            .sum()
    };
    let nn = history
        .iter()
        .filter(|r| r.metrics.goal_reached && r.metrics.ctrl_rate_hz > 0.0)
        .min_by(|a, b| {
            dist(&a.point)
                .total_cmp(&dist(&b.point))
                .then(hardware_cost_milli(&a.point).cmp(&hardware_cost_milli(&b.point)))
                .then(a.point.cmp(&b.point))
        })?;
    let ctrl = (nn.metrics.ctrl_rate_hz * capacity(c, frac) / capacity(&nn.point, frac)).min(f64::from(c.lidar_hz));
    let nav = nn.metrics.nav_time_s * nn.metrics.ctrl_rate_hz / ctrl;
    Some((nav, ctrl))
}

fn predicted_feasible(c: &DesignPoint, history: &[MemoryRecord], space: &DesignSpace, frac: f64, k: &Constraints) -> bool {
    predict(c, history, space, frac).is_some_and(|(nav, ctrl)| nav <= k.max_nav_time_s && ctrl > k.min_ctrl_rate_hz)
}

/// Rule that produced a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    LowerLidar,
    Climb(Axis),
    Trim,
    SwapLidar,
    Stop,
}

fn describe(last: &MemoryRecord) -> String {
    let m = &last.metrics;
    let mut s = format!("{}: ", last.point);
    if m.goal_reached {
        let _ = write!(s, "navigation {:.2} s", m.nav_time_s);
    } else {
        s.push_str("goal not reached");
    }
    let _ = write!(s, ", control rate {:.3} Hz", m.ctrl_rate_hz);
    if !last.bottleneck_flags.is_empty() {
        let flags: Vec<&str> = last.bottleneck_flags.iter().map(|f| f.as_str()).collect();
        let _ = write!(s, ", flags [{}]", flags.join(", "));
    }
    s
}

/// Best feasible record: cheapest, then fastest, then highest control rate.
fn best_feasible(history: &[MemoryRecord]) -> Option<&MemoryRecord> {
    history.iter().filter(|r| r.feasible).min_by(|a, b| {
        hardware_cost_milli(&a.point)
            .cmp(&hardware_cost_milli(&b.point))
            .then(a.metrics.nav_time_s.total_cmp(&b.metrics.nav_time_s))
            .then(b.metrics.ctrl_rate_hz.total_cmp(&a.metrics.ctrl_rate_hz))
            .then(a.point.cmp(&b.point))
    })
}

/// One application of the rule cascade. `cores_first` picks the axis the
/// climb rule tries first.
pub fn guided_rules(
    last: &MemoryRecord,
    history: &[MemoryRecord],
    space: &DesignSpace,
    constraints: &Constraints,
    params: &GuidedParams,
    cores_first: bool,
) -> (Proposal, Rule) {
    let seen: HashSet<DesignPoint> = history.iter().map(|r| r.point).collect();
    let li = space.index_of(&last.point).expect("last point is a member");
    let dims = space.dims();
    let frac = params.assumed_parallel_fraction;
    let why = describe(last);
    let fresh = |ix: [usize; 3]| -> Option<DesignPoint> {
        let p = space.point_at(ix);
        (!seen.contains(&p)).then_some(p)
    };

    if last.has_flag(IssueType::FrequencyBound) && !last.has_flag(IssueType::CpuBound) && li[2] > 0 {
        let mut ix = li;
        ix[2] -= 1;
        if let Some(p) = fresh(ix) {
            return (
                Proposal::next(p, format!("{why}. Inputs arrive at mismatched rates; lowering the LiDAR rate to {} Hz.", p.lidar_hz)),
                Rule::LowerLidar,
            );
        }
    }

    if !last.feasible {
        let axes = if cores_first { [Axis::Cores, Axis::Frequency] } else { [Axis::Frequency, Axis::Cores] };
        // a climb target predicted no faster than a cheaper known feasible
        // point cannot improve the front
        let dominated = |c: &DesignPoint| {
            let Some((nav, _)) = predict(c, history, space, frac) else { return false };
            history.iter().any(|h| {
                h.feasible && hardware_cost_milli(&h.point) <= hardware_cost_milli(c) && h.metrics.nav_time_s <= nav
            })
        };
        for axis in axes {
            let mut ix = li;
            match axis {
                Axis::Cores => ix[0] = (ix[0] + params.core_step).min(dims[0] - 1),
                _ => ix[1] = (ix[1] + params.frequency_step).min(dims[1] - 1),
            }
            if ix == li {
                continue;
            }
            if let Some(p) = fresh(ix).filter(|p| !dominated(p)) {
                let what = match axis {
                    Axis::Cores => format!("raising the core count to {}", p.cores),
                    _ => format!("raising the core frequency to {:?} GHz", p.core_frequency_ghz),
                };
                let cause = if last.has_flag(IssueType::CpuBound) {
                    "CPU-bound callbacks are starving the pipeline"
                } else {
                    "the constraints are not met"
                };
                return (Proposal::next(p, format!("{why}. {cause}; {what}.")), Rule::Climb(axis));
            }
        }
    }

    if last.feasible {
        let base_cap = capacity(&last.point, frac);
        let base_cost = hardware_cost_milli(&last.point);
        let mut moves = Vec::new();
        if li[0] > 0 {
            moves.push(space.point_at([li[0] - 1, li[1], li[2]]));
        }
        if li[1] > 0 {
            moves.push(space.point_at([li[0], li[1] - 1, li[2]]));
        }
        if li[1] + 1 < dims[1] {
            let f2 = space.frequencies_ghz()[li[1] + 1];
            let f2_milli = (f2 * 1000.0).round() as u64;
            if let Some(&n) = space
                .core_counts()
                .iter()
                .rev()
                .find(|&&n| u64::from(n) * f2_milli < base_cost)
            {
                moves.push(DesignPoint::new(n, f2, last.point.lidar_hz));
            }
        }
        let mut ranked: Vec<(f64, u64, DesignPoint)> = moves
            .into_iter()
            .filter(|c| !seen.contains(c))
            .filter(|c| predicted_feasible(c, history, space, frac, constraints))
            .map(|c| {
                let eff = (capacity(&c, frac) / base_cap) / (hardware_cost_milli(&c) as f64 / base_cost as f64);
                (eff, hardware_cost_milli(&c), c)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        if let Some(&(_, _, p)) = ranked.first() {
            return (
                Proposal::next(
                    p,
                    format!("{why}. Constraints are met; trying the cheaper configuration {p}, predicted to stay feasible."),
                ),
                Rule::Trim,
            );
        }
        for ix2 in [li[2].checked_sub(1), Some(li[2] + 1).filter(|&i| i < dims[2])].into_iter().flatten() {
            if let Some(p) = fresh([li[0], li[1], ix2]) {
                return (
                    Proposal::next(p, format!("{why}. No cheaper move is predicted feasible; checking LiDAR {} Hz at the same cost.", p.lidar_hz)),
                    Rule::SwapLidar,
                );
            }
        }
    }

    match best_feasible(history) {
        Some(b) => (
            Proposal {
                point: b.point,
                rationale: format!("{why}. No admissible move remains; the best feasible design is {}.", b.point),
                terminate: true,
            },
            Rule::Stop,
        ),
        None => (
            Proposal {
                point: last.point,
                rationale: format!("{why}. No admissible move remains and no feasible design was found."),
                terminate: true,
            },
            Rule::Stop,
        ),
    }
}

/// Stateful wrapper around [`guided_rules`].
pub struct GuidedStrategy {
    params: GuidedParams,
    rng: Rng,
    cores_first: bool,
}

impl GuidedStrategy {
    pub fn new(params: GuidedParams, seed: u64) -> Self {
        Self {
            params,
            rng: substream(seed, "strategy/guided"),
            cores_first: true,
        }
    }
}

impl Strategy for GuidedStrategy {
    fn name(&self) -> &str {
        "guided"
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Proposal, SearchError> {
        let Some(last) = ctx.history.last() else {
            let start = match self.params.start {
                Some(p) => ctx
                    .space
                    .canonical(&p)
                    .ok_or_else(|| SearchError::InvalidProposal(format!("start point {p} is outside the space")))?,
                None => *enumerate(ctx.space).choose(&mut self.rng).expect("space is non-empty"),
            };
            return Ok(Proposal::next(start, "initial design point"));
        };
        let (proposal, rule) = guided_rules(
            last,
            ctx.history,
            ctx.space,
            &ctx.scenario.constraints,
            &self.params,
            self.cores_first,
        );
        if let Rule::Climb(axis) = rule {
            self.cores_first = axis != Axis::Cores;
        }
        Ok(proposal)
    }
}
