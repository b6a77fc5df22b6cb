//! Pareto fronts over (navigation time, hardware cost) and search-quality
//! metrics for budgeted runs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::design_space::{is_feasible, Constraints, DesignPoint, Metrics};

/// A feasible evaluation in objective space; both objectives are minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub nav_time_s: f64,
    pub hw_cost: f64,
    pub source: DesignPoint,
}

impl ObjectivePoint {
    pub fn from_metrics(p: DesignPoint, m: &Metrics) -> Self {
        Self {
            nav_time_s: m.nav_time_s,
            hw_cost: m.hw_cost,
            source: p,
        }
    }

    /// No worse on both objectives and strictly better on one.
    pub fn dominates(&self, o: &ObjectivePoint) -> bool {
        self.nav_time_s <= o.nav_time_s
            && self.hw_cost <= o.hw_cost
            && (self.nav_time_s < o.nav_time_s || self.hw_cost < o.hw_cost)
    }
}

/// Feasible evaluations as objective points.
pub fn feasible_objectives<'a>(
    evals: impl IntoIterator<Item = (&'a DesignPoint, &'a Metrics)>,
    c: &Constraints,
) -> Vec<ObjectivePoint> {
    evals
        .into_iter()
        .filter(|(_, m)| is_feasible(m, c))
        .map(|(p, m)| ObjectivePoint::from_metrics(*p, m))
        .collect()
}

/// Non-dominated subset, sorted by (nav time, cost, source). Points equal on
/// both objectives do not dominate each other and are all kept.
pub fn pareto_front(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.nav_time_s
            .total_cmp(&b.nav_time_s)
            .then(a.hw_cost.total_cmp(&b.hw_cost))
            .then(a.source.cmp(&b.source))
    });
    let mut out = Vec::new();
    // lowest cost among points with strictly smaller navigation time
    let mut best_cost = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let nav = sorted[i].nav_time_s;
        let mut j = i;
        while j < sorted.len() && sorted[j].nav_time_s == nav {
            j += 1;
        }
        let group_min = sorted[i].hw_cost;
        if group_min < best_cost {
            out.extend(sorted[i..j].iter().filter(|q| q.hw_cost == group_min));
            best_cost = group_min;
        }
        i = j;
    }
    out
}

/// Number of distinct found design points that are on the true front.
pub fn front_hits(found: &[ObjectivePoint], truth_front: &[ObjectivePoint]) -> usize {
    let truth: HashSet<DesignPoint> = truth_front.iter().map(|o| o.source).collect();
    found
        .iter()
        .map(|o| o.source)
        .filter(|p| truth.contains(p))
        .collect::<HashSet<_>>()
        .len()
}

/// 1-based position of the first evaluation that lands on the true front.
pub fn first_hit_iteration(evaluated: &[DesignPoint], truth_front: &[ObjectivePoint]) -> Option<usize> {
    let truth: HashSet<DesignPoint> = truth_front.iter().map(|o| o.source).collect();
    evaluated.iter().position(|p| truth.contains(p)).map(|i| i + 1)
}

/// Per-run JSON summary written by comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub budget: usize,
    pub front_size: usize,
    pub hits: usize,
    pub first_hit_iteration: Option<usize>,
    pub best_cost: Option<f64>,
    pub best_nav_time_s: Option<f64>,
    pub evaluations: usize,
}

#[derive(Serialize)]
struct PlotRow<'a> {
    cores: u32,
    freq_ghz: f64,
    lidar_hz: u32,
    nav_time_s: f64,
    hw_cost: f64,
    feasible: bool,
    on_truth_front: bool,
    found_by: &'a str,
}

/// CSV with one row per evaluation. `found` lists, per strategy label, the
/// points that strategy evaluated; `found_by` joins matching labels with ';'.
pub fn emit_plot_data(
    all: &[(DesignPoint, Metrics)],
    truth_front: &[ObjectivePoint],
    found: &[(String, Vec<DesignPoint>)],
    constraints: &Constraints,
) -> String {
    let truth: HashSet<DesignPoint> = truth_front.iter().map(|o| o.source).collect();
    let found_sets: Vec<(&str, HashSet<DesignPoint>)> = found
        .iter()
        .map(|(name, pts)| (name.as_str(), pts.iter().copied().collect()))
        .collect();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "cores",
        "freq_ghz",
        "lidar_hz",
        "nav_time_s",
        "hw_cost",
        "feasible",
        "on_truth_front",
        "found_by",
    ])
    .expect("in-memory csv");
    for (p, m) in all {
        let by: Vec<&str> = found_sets
            .iter()
            .filter(|(_, s)| s.contains(p))
            .map(|(n, _)| *n)
            .collect();
        let by = by.join(";");
        w.serialize(PlotRow {
            cores: p.cores,
            freq_ghz: p.core_frequency_ghz,
            lidar_hz: p.lidar_hz,
            nav_time_s: m.nav_time_s,
            hw_cost: m.hw_cost,
            feasible: is_feasible(m, constraints),
            on_truth_front: truth.contains(p),
            found_by: &by,
        })
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(nav: f64, cost: f64, cores: u32) -> ObjectivePoint {
        ObjectivePoint {
            nav_time_s: nav,
            hw_cost: cost,
            source: DesignPoint::new(cores, 1.0, 7),
        }
    }

    /// Independent O(n²) oracle.
    fn brute_force(points: &[ObjectivePoint]) -> Vec<ObjectivePoint> {
        points
            .iter()
            .filter(|a| !points.iter().any(|b| b.dominates(a)))
            .copied()
            .collect()
    }

    fn as_set(v: &[ObjectivePoint]) -> Vec<(u64, u64, DesignPoint)> {
        let mut s: Vec<_> = v
            .iter()
            .map(|o| (o.nav_time_s.to_bits(), o.hw_cost.to_bits(), o.source))
            .collect();
        s.sort();
        s
    }

    #[test]
    fn examples() {
        assert_eq!(pareto_front(&[op(1.0, 1.0, 1)]), vec![op(1.0, 1.0, 1)]);
        let front = pareto_front(&[op(171.13, 34.5, 23), op(165.04, 32.4, 18)]);
        assert_eq!(front, vec![op(165.04, 32.4, 18)]);
        assert!(pareto_front(&[]).is_empty());
    }

    #[test]
    fn ties_are_kept() {
        let pts = [op(10.0, 5.0, 1), op(10.0, 5.0, 2), op(10.0, 6.0, 3), op(12.0, 5.0, 4)];
        assert_eq!(as_set(&pareto_front(&pts)), as_set(&pts[..2]));
    }

    #[test]
    fn hits_examples() {
        let truth = vec![op(1.0, 3.0, 1), op(2.0, 2.0, 2), op(3.0, 1.0, 3)];
        assert_eq!(front_hits(&truth, &truth), 3);
        assert_eq!(front_hits(&[op(9.0, 9.0, 9)], &truth), 0);
        assert_eq!(front_hits(&[op(9.0, 9.0, 9), op(5.0, 5.0, 2)], &truth), 1);
        let order = [DesignPoint::new(9, 1.0, 7), DesignPoint::new(2, 1.0, 7)];
        assert_eq!(first_hit_iteration(&order, &truth), Some(2));
        assert_eq!(first_hit_iteration(&order[..1], &truth), None);
    }

    #[test]
    fn plot_data_shape() {
        let c = Constraints::default();
        assert_eq!(
            emit_plot_data(&[], &[], &[], &c),
            "cores,freq_ghz,lidar_hz,nav_time_s,hw_cost,feasible,on_truth_front,found_by\n"
        );
        let m = |nav: f64| Metrics {
            nav_time_s: nav,
            deviation_score: Some(0.0),
            ctrl_rate_hz: 5.0,
            hw_cost: 3.0,
            goal_reached: true,
        };
        let p1 = DesignPoint::new(2, 1.5, 7);
        let p2 = DesignPoint::new(3, 1.5, 7);
        let csv = emit_plot_data(
            &[(p1, m(300.0)), (p2, m(450.0))],
            &[ObjectivePoint::from_metrics(p1, &m(300.0))],
            &[("guided".into(), vec![p1, p2]), ("ga".into(), vec![p1])],
            &c,
        );
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "2,1.5,7,300.0,3.0,true,true,guided;ga");
        assert_eq!(lines[2], "3,1.5,7,450.0,3.0,false,false,guided");
    }

    fn points(max: usize) -> impl Strategy<Value = Vec<ObjectivePoint>> {
        // a coarse grid forces many ties alongside arbitrary values
        let v = prop_oneof![(1u32..20).prop_map(f64::from), 1.0f64..20.0];
        prop::collection::vec((v.clone(), v), 0..max).prop_map(|xs| {
            xs.into_iter()
                .enumerate()
                .map(|(i, (a, b))| op(a, b, i as u32))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(pts in points(300)) {
            prop_assert_eq!(as_set(&pareto_front(&pts)), as_set(&brute_force(&pts)));
        }

        #[test]
        fn idempotent(pts in points(200)) {
            let f = pareto_front(&pts);
            prop_assert_eq!(pareto_front(&f), f);
        }

        #[test]
        fn order_invariant(pts in points(200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut crate::rng::substream(seed, "shuffle"));
            prop_assert_eq!(pareto_front(&shuffled), pareto_front(&pts));
        }

        #[test]
        fn adding_never_revives_dominated(pts in points(200), extra in (1.0f64..20.0, 1.0f64..20.0)) {
            let before = as_set(&pareto_front(&pts));
            let mut more = pts.clone();
            more.push(op(extra.0, extra.1, 10_000));
            for q in as_set(&pareto_front(&more)) {
                if q.2.cores == 10_000 { continue; }
                prop_assert!(before.contains(&q));
            }
        }
    }
}
