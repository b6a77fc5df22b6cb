//! Task definition and the ideal reference path.
//!
//! Maps are explicit centerline polylines. The ideal trajectory is the stretch
//! of centerline between the projections of start and goal, following the
//! polyline's direction (wrapping around when the centerline is a loop).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design_space::Constraints;

/// Start and goal must lie within this distance of the centerline.
pub const SNAP_DISTANCE_M: f64 = 2.0;

/// Upper bound accepted for the cruise speed.
pub const MAX_CRUISE_SPEED_KMH: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, o: &Point2D) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn lerp(&self, o: &Point2D, t: f64) -> Point2D {
        Point2D::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }
}

impl From<[f64; 2]> for Point2D {
    fn from(a: [f64; 2]) -> Self {
        Point2D::new(a[0], a[1])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolylineError {
    #[error("a polyline needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("point {0} repeats its predecessor")]
    Repeated(usize),
}

/// Where a point lands on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc-length offset of the foot point.
    pub s: f64,
    pub distance: f64,
    pub point: Point2D,
}

/// At least two points, consecutive points distinct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    points: Vec<Point2D>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point2D>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooFewPoints(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(PolylineError::NonFinite(i));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(PolylineError::Repeated(i + 1));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].dist(&w[1]);
            cumulative.push(acc);
        }
        Ok(Self { points, cumulative })
    }

    /// Build from raw points, dropping consecutive duplicates first.
    pub fn from_points_dedup(points: impl IntoIterator<Item = Point2D>) -> Result<Self, PolylineError> {
        let mut v: Vec<Point2D> = Vec::new();
        for p in points {
            if v.last() != Some(&p) {
                v.push(p);
            }
        }
        Self::new(v)
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn first(&self) -> Point2D {
        self.points[0]
    }

    pub fn last(&self) -> Point2D {
        self.points[self.points.len() - 1]
    }

    pub fn is_closed(&self) -> bool {
        self.first() == self.last()
    }

    pub fn len(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    fn segment_at(&self, s: f64) -> usize {
        // last segment whose start offset is <= s
        let i = self.cumulative.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Point at arc-length offset `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point2D {
        let s = s.clamp(0.0, self.len());
        let i = self.segment_at(s);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        self.points[i].lerp(&self.points[i + 1], ((s - self.cumulative[i]) / seg).clamp(0.0, 1.0))
    }

    /// Unit tangent at offset `s`.
    pub fn tangent_at(&self, s: f64) -> (f64, f64) {
        let i = self.segment_at(s.clamp(0.0, self.len()));
        let (a, b) = (self.points[i], self.points[i + 1]);
        let l = a.dist(&b);
        ((b.x - a.x) / l, (b.y - a.y) / l)
    }

    /// Closest point on the polyline; earliest offset wins ties.
    pub fn project(&self, p: &Point2D) -> Projection {
        let mut best = Projection {
            s: 0.0,
            distance: f64::INFINITY,
            point: self.first(),
        };
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let l2 = dx * dx + dy * dy;
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0);
            let q = a.lerp(&b, t);
            let d = p.dist(&q);
            if d < best.distance {
                best = Projection {
                    s: self.cumulative[i] + t * l2.sqrt(),
                    distance: d,
                    point: q,
                };
            }
        }
        best
    }

    /// Geometry between offsets `s0 < s1`, both clamped to the polyline.
    pub fn slice(&self, s0: f64, s1: f64) -> Result<Polyline, PolylineError> {
        let (s0, s1) = (s0.clamp(0.0, self.len()), s1.clamp(0.0, self.len()));
        let mut pts = vec![self.point_at(s0)];
        for (p, &c) in self.points.iter().zip(&self.cumulative) {
            if c > s0 && c < s1 {
                pts.push(*p);
            }
        }
        pts.push(self.point_at(s1));
        Polyline::from_points_dedup(pts)
    }

    /// `m` points spaced uniformly in arc length, ends included.
    pub fn resample(&self, m: usize) -> Vec<Point2D> {
        assert!(m >= 2, "resample needs at least two points");
        let l = self.len();
        (0..m)
            .map(|i| self.point_at(l * i as f64 / (m - 1) as f64))
            .collect()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounds(&self) -> (Point2D, Point2D) {
        let mut lo = self.first();
        let mut hi = self.first();
        for p in &self.points {
            lo = Point2D::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2D::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

impl<'de> Deserialize<'de> for Polyline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            points: Vec<Point2D>,
        }
        let raw = Raw::deserialize(d)?;
        Polyline::new(raw.points).map_err(serde::de::Error::custom)
    }
}

/// Sum of segment lengths.
pub fn arc_length(p: &Polyline) -> f64 {
    p.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LaneDriving,
    AutomatedValetParking,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("no path: the goal projects before the start on an open centerline")]
    NoPath,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Map section as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Two opposite corners of the map extent; used as the deviation
    /// normalizer. Defaults to the centerline's bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 2]; 2]>,
    pub centerline: Vec<[f64; 2]>,
}

/// Scenario section as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub task: Task,
    pub map_id: String,
    pub cruise_speed_kmh: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub constraints: Constraints,
    pub map: MapConfig,
}

fn default_timeout() -> f64 {
    1800.0
}

/// Fully validated task definition.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub task: Task,
    pub map_id: String,
    pub centerline: Polyline,
    pub map_bounds: (Point2D, Point2D),
    pub start: Point2D,
    pub goal: Point2D,
    pub cruise_speed_kmh: f64,
    pub constraints: Constraints,
    pub timeout_s: f64,
}

impl ScenarioSpec {
    pub fn from_config(c: &ScenarioConfig) -> Result<Self, ScenarioError> {
        if c.map_id.trim().is_empty() {
            return Err(invalid("map_id", "must not be empty"));
        }
        if !(c.cruise_speed_kmh.is_finite()
            && c.cruise_speed_kmh > 0.0
            && c.cruise_speed_kmh <= MAX_CRUISE_SPEED_KMH)
        {
            return Err(invalid(
                "cruise_speed_kmh",
                format!("{} is outside (0, {MAX_CRUISE_SPEED_KMH}]", c.cruise_speed_kmh),
            ));
        }
        if !(c.timeout_s.is_finite() && c.timeout_s > c.constraints.max_nav_time_s) {
            return Err(invalid(
                "timeout_s",
                format!(
                    "{} must exceed max_nav_time_s ({})",
                    c.timeout_s, c.constraints.max_nav_time_s
                ),
            ));
        }
        let centerline = Polyline::new(c.map.centerline.iter().map(|&p| p.into()).collect())
            .map_err(|e| invalid("map.centerline", e.to_string()))?;
        let start = Point2D::from(c.start);
        let goal = Point2D::from(c.goal);
        if !start.is_finite() {
            return Err(invalid("start", "non-finite coordinate"));
        }
        if !goal.is_finite() {
            return Err(invalid("goal", "non-finite coordinate"));
        }
        if start == goal {
            return Err(invalid("goal", "start and goal coincide"));
        }
        for (field, p) in [("start", start), ("goal", goal)] {
            let d = centerline.project(&p).distance;
            if d > SNAP_DISTANCE_M {
                return Err(invalid(
                    field,
                    format!("{d:.3} m from the centerline (snap distance {SNAP_DISTANCE_M} m)"),
                ));
            }
        }
        let map_bounds = match c.map.bounds {
            Some([a, b]) => {
                let (a, b) = (Point2D::from(a), Point2D::from(b));
                if !(a.is_finite() && b.is_finite()) || a.dist(&b) == 0.0 {
                    return Err(invalid("map.bounds", "corners must be finite and distinct"));
                }
                (a, b)
            }
            None => centerline.bounds(),
        };
        let spec = Self {
            task: c.task,
            map_id: c.map_id.clone(),
            centerline,
            map_bounds,
            start,
            goal,
            cruise_speed_kmh: c.cruise_speed_kmh,
            constraints: c.constraints,
            timeout_s: c.timeout_s,
        };
        ideal_trajectory(&spec).map_err(|_| invalid("goal", "unreachable from start along the centerline"))?;
        Ok(spec)
    }

    pub fn cruise_speed_mps(&self) -> f64 {
        self.cruise_speed_kmh / 3.6
    }

    /// Diagonal of the map extent, the normalizer for deviation scores.
    pub fn map_diagonal_m(&self) -> f64 {
        self.map_bounds.0.dist(&self.map_bounds.1)
    }
}

#[derive(Deserialize)]
struct ScenarioDocument {
    scenario: ScenarioConfig,
}

/// Parse and validate the `[scenario]` table of a config document.
pub fn load_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let doc: ScenarioDocument = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    ScenarioSpec::from_config(&doc.scenario)
}

/// The bundled robotaxi config file.
pub const ROBOTAXI_CONFIG: &str = include_str!("../configs/robotaxi.toml");

/// The bundled parking-lot lane-driving scenario.
pub fn robotaxi() -> ScenarioSpec {
    load_scenario(ROBOTAXI_CONFIG).expect("bundled robotaxi scenario is valid")
}

/// Centerline from the start projection to the goal projection.
pub fn ideal_trajectory(s: &ScenarioSpec) -> Result<Polyline, ScenarioError> {
    let line = &s.centerline;
    let a = line.project(&s.start).s;
    let b = line.project(&s.goal).s;
    let path = if b > a {
        line.slice(a, b)
    } else if line.is_closed() && b < a {
        let head = line.slice(a, line.len()).map_err(|_| ScenarioError::NoPath);
        let tail = line.slice(0.0, b).map_err(|_| ScenarioError::NoPath);
        let mut pts: Vec<Point2D> = match head {
            Ok(h) => h.points().to_vec(),
            Err(_) => vec![line.first()],
        };
        if let Ok(t) = tail {
            pts.extend_from_slice(t.points());
        }
        Polyline::from_points_dedup(pts)
    } else {
        return Err(ScenarioError::NoPath);
    };
    path.map_err(|_| ScenarioError::NoPath)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pl(pts: &[(f64, f64)]) -> Polyline {
        Polyline::new(pts.iter().map(|&(x, y)| Point2D::new(x, y)).collect()).unwrap()
    }

    fn straight_spec(start: f64, goal: f64) -> ScenarioSpec {
        let cfg = ScenarioConfig {
            task: Task::LaneDriving,
            map_id: "straight".into(),
            cruise_speed_kmh: 30.0,
            timeout_s: 1800.0,
            start: [start, 0.0],
            goal: [goal, 0.0],
            constraints: Constraints::default(),
            map: MapConfig {
                bounds: None,
                centerline: vec![[0.0, 0.0], [40.0, 0.0], [100.0, 0.0]],
            },
        };
        ScenarioSpec::from_config(&cfg).unwrap()
    }

    #[test]
    fn arc_length_examples() {
        assert_eq!(arc_length(&pl(&[(0.0, 0.0), (3.0, 4.0)])), 5.0);
        assert_eq!(arc_length(&pl(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])), 2.0);
        let square = pl(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]);
        assert_eq!(arc_length(&square), 40.0);
        assert!(square.is_closed());
    }

    #[test]
    fn polyline_validation() {
        assert_eq!(Polyline::new(vec![Point2D::new(0.0, 0.0)]), Err(PolylineError::TooFewPoints(1)));
        assert_eq!(
            Polyline::new(vec![Point2D::new(0.0, 0.0), Point2D::new(0.0, 0.0)]),
            Err(PolylineError::Repeated(1))
        );
        assert_eq!(
            Polyline::new(vec![Point2D::new(0.0, f64::NAN), Point2D::new(1.0, 0.0)]),
            Err(PolylineError::NonFinite(0))
        );
    }

    #[test]
    fn ideal_full_segment() {
        let s = straight_spec(0.0, 100.0);
        let ideal = ideal_trajectory(&s).unwrap();
        assert_eq!(ideal.first(), Point2D::new(0.0, 0.0));
        assert_eq!(ideal.last(), Point2D::new(100.0, 0.0));
        assert_eq!(ideal.len(), 100.0);
    }

    #[test]
    fn ideal_clipped_mid_segment() {
        let s = straight_spec(25.0, 70.0);
        let ideal = ideal_trajectory(&s).unwrap();
        assert!((ideal.len() - 45.0).abs() < 1e-12);
        assert_eq!(ideal.points().len(), 3); // keeps the interior vertex at 40
    }

    #[test]
    fn goal_before_start_on_open_line_is_no_path() {
        let mut s = straight_spec(10.0, 90.0);
        std::mem::swap(&mut s.start, &mut s.goal);
        assert_eq!(ideal_trajectory(&s), Err(ScenarioError::NoPath));
    }

    #[test]
    fn loop_wraps_in_travel_direction() {
        let square = pl(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]);
        let s = ScenarioSpec {
            task: Task::LaneDriving,
            map_id: "sq".into(),
            centerline: square.clone(),
            map_bounds: square.bounds(),
            start: Point2D::new(0.0, 5.0),
            goal: Point2D::new(5.0, 0.0),
            cruise_speed_kmh: 10.0,
            constraints: Constraints::default(),
            timeout_s: 1000.0,
        };
        let ideal = ideal_trajectory(&s).unwrap();
        assert!((ideal.len() - 10.0).abs() < 1e-12);
        assert_eq!(ideal.first(), s.start);
        assert_eq!(ideal.last(), s.goal);
    }

    #[test]
    fn bundled_robotaxi_is_valid() {
        let s = robotaxi();
        assert_eq!(s.cruise_speed_kmh, 30.0);
        assert_eq!(s.constraints.max_nav_time_s, 400.0);
        assert_eq!(s.task, Task::LaneDriving);
        assert!(s.centerline.is_closed());
        let ideal = ideal_trajectory(&s).unwrap();
        assert!(ideal.len() <= s.centerline.len());
        assert!((ideal.len() - 1328.365).abs() < 1e-6, "{}", ideal.len());
        assert!(ideal.first().dist(&s.start) < 1e-9);
        assert!(ideal.last().dist(&s.goal) < 1e-9);
    }

    fn robotaxi_text_with(find: &str, replace: &str) -> String {
        assert!(ROBOTAXI_CONFIG.contains(find), "fixture drifted: {find}");
        ROBOTAXI_CONFIG.replacen(find, replace, 1)
    }

    #[test]
    fn rejects_degenerate_configs() {
        let same = robotaxi_text_with("goal = [-9.470, -1.472]", "goal = [-4.973, 20.328]");
        assert!(matches!(load_scenario(&same), Err(ScenarioError::Invalid { field: "goal", .. })));
        let neg = robotaxi_text_with("cruise_speed_kmh = 30.0", "cruise_speed_kmh = -5.0");
        assert!(matches!(
            load_scenario(&neg),
            Err(ScenarioError::Invalid { field: "cruise_speed_kmh", .. })
        ));
        let off = robotaxi_text_with("start = [-4.973, 20.328]", "start = [-4.973, 24.0]");
        assert!(matches!(load_scenario(&off), Err(ScenarioError::Invalid { field: "start", .. })));
    }

    #[test]
    fn parse_errors_carry_line_context() {
        let err = load_scenario("[scenario]\ntask = \"lane_driving\"\nmap_id = \n").unwrap_err();
        match err {
            ScenarioError::Parse(msg) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn rigid(p: Point2D, theta: f64, tx: f64, ty: f64) -> Point2D {
        let (s, c) = theta.sin_cos();
        Point2D::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty)
    }

    proptest! {
        #[test]
        fn arc_length_rigid_invariant(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..30),
            theta in 0.0f64..std::f64::consts::TAU,
            tx in -1e3f64..1e3,
            ty in -1e3f64..1e3,
        ) {
            let pts: Vec<Point2D> = pts.into_iter().map(|(x, y)| Point2D::new(x, y)).collect();
            prop_assume!(pts.windows(2).all(|w| w[0].dist(&w[1]) > 1e-6));
            let a = Polyline::new(pts.clone()).unwrap();
            let b = Polyline::new(pts.iter().map(|p| rigid(*p, theta, tx, ty)).collect()).unwrap();
            prop_assert!((arc_length(&a) - arc_length(&b)).abs() <= 1e-9 * arc_length(&a).max(1.0));
        }

        #[test]
        fn ideal_is_contiguous_subset(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            prop_assume!(b - a > 1e-3);
            let s = straight_spec(a, b);
            let ideal = ideal_trajectory(&s).unwrap();
            prop_assert!(ideal.len() <= s.centerline.len());
            prop_assert!((ideal.len() - (b - a)).abs() < 1e-9);
            for p in ideal.points() {
                prop_assert!(s.centerline.project(p).distance < 1e-9);
            }
        }
    }
}
