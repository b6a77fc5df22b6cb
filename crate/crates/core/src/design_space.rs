//! Configuration space, hardware cost model, and feasibility constraints.
//!
//! A [`DesignPoint`] is one (cores, core frequency, LiDAR rate) tuple. The
//! default [`DesignSpace`] spans 28 core counts × 5 frequencies × 2 LiDAR
//! rates. Cost is aggregate CPU capacity, cores × GHz.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when matching a frequency against the axis set.
pub const FREQ_TOLERANCE: f64 = 1e-9;

/// One hardware/software configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignPoint {
    pub cores: u32,
    pub core_frequency_ghz: f64,
    pub lidar_hz: u32,
}

impl DesignPoint {
    pub fn new(cores: u32, core_frequency_ghz: f64, lidar_hz: u32) -> Self {
        Self {
            cores,
            core_frequency_ghz,
            lidar_hz,
        }
    }
}

// Frequencies always come from a finite axis set, so bitwise comparison of the
// f64 is exact-by-construction and gives a lawful Eq/Hash.
impl PartialEq for DesignPoint {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DesignPoint {}

impl PartialOrd for DesignPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DesignPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cores
            .cmp(&other.cores)
            .then(self.core_frequency_ghz.total_cmp(&other.core_frequency_ghz))
            .then(self.lidar_hz.cmp(&other.lidar_hz))
    }
}

impl Hash for DesignPoint {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.cores.hash(state);
        self.core_frequency_ghz.to_bits().hash(state);
        self.lidar_hz.hash(state);
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} cores, {:?} GHz, {} Hz)",
            self.cores, self.core_frequency_ghz, self.lidar_hz
        )
    }
}

/// The three axes of the space; used to name offending fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Cores,
    Frequency,
    Lidar,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Cores => "cores",
            Axis::Frequency => "core_frequency_ghz",
            Axis::Lidar => "lidar_hz",
        })
    }
}

/// Result of [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(Axis),
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Valid
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("axis {0} is empty")]
    EmptyAxis(Axis),
    #[error("axis {0} must be strictly increasing without duplicates")]
    NotIncreasing(Axis),
    #[error("axis {0} contains a non-positive or non-finite value")]
    BadValue(Axis),
}

/// Ordered axis sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    core_counts: Vec<u32>,
    frequencies_ghz: Vec<f64>,
    lidar_rates_hz: Vec<u32>,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self::new(
            (1..=28).collect(),
            vec![1.0, 1.2, 1.5, 1.8, 2.1],
            vec![7, 14],
        )
        .expect("default space is valid")
    }
}

impl DesignSpace {
    pub fn new(
        core_counts: Vec<u32>,
        frequencies_ghz: Vec<f64>,
        lidar_rates_hz: Vec<u32>,
    ) -> Result<Self, SpaceError> {
        fn check<T: PartialOrd>(v: &[T], axis: Axis) -> Result<(), SpaceError> {
            if v.is_empty() {
                return Err(SpaceError::EmptyAxis(axis));
            }
            if v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SpaceError::NotIncreasing(axis));
            }
            Ok(())
        }
        check(&core_counts, Axis::Cores)?;
        check(&frequencies_ghz, Axis::Frequency)?;
        check(&lidar_rates_hz, Axis::Lidar)?;
        if core_counts[0] == 0 {
            return Err(SpaceError::BadValue(Axis::Cores));
        }
        if frequencies_ghz.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(SpaceError::BadValue(Axis::Frequency));
        }
        if lidar_rates_hz[0] == 0 {
            return Err(SpaceError::BadValue(Axis::Lidar));
        }
        Ok(Self {
            core_counts,
            frequencies_ghz,
            lidar_rates_hz,
        })
    }

    pub fn core_counts(&self) -> &[u32] {
        &self.core_counts
    }

    pub fn frequencies_ghz(&self) -> &[f64] {
        &self.frequencies_ghz
    }

    pub fn lidar_rates_hz(&self) -> &[u32] {
        &self.lidar_rates_hz
    }

    /// Axis lengths as (cores, frequency, lidar).
    pub fn dims(&self) -> [usize; 3] {
        [
            self.core_counts.len(),
            self.frequencies_ghz.len(),
            self.lidar_rates_hz.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of the frequency on its axis, within [`FREQ_TOLERANCE`].
    pub fn frequency_index(&self, ghz: f64) -> Option<usize> {
        self.frequencies_ghz
            .iter()
            .position(|f| (f - ghz).abs() <= FREQ_TOLERANCE)
    }

    /// Per-axis indices of `p`, if it is a member of the space.
    pub fn index_of(&self, p: &DesignPoint) -> Option<[usize; 3]> {
        Some([
            self.core_counts.binary_search(&p.cores).ok()?,
            self.frequency_index(p.core_frequency_ghz)?,
            self.lidar_rates_hz.binary_search(&p.lidar_hz).ok()?,
        ])
    }

    /// Point at per-axis indices. Panics if any index is out of range.
    pub fn point_at(&self, ix: [usize; 3]) -> DesignPoint {
        DesignPoint::new(
            self.core_counts[ix[0]],
            self.frequencies_ghz[ix[1]],
            self.lidar_rates_hz[ix[2]],
        )
    }

    /// Canonical member equal to `p` (snaps frequency representation).
    pub fn canonical(&self, p: &DesignPoint) -> Option<DesignPoint> {
        self.index_of(p).map(|ix| self.point_at(ix))
    }

    /// Snap raw values to the nearest axis members; ties go to the lower value.
    pub fn clamp(&self, cores: f64, ghz: f64, lidar_hz: f64) -> DesignPoint {
        fn nearest(values: impl Iterator<Item = f64>, x: f64) -> usize {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, v) in values.enumerate() {
                let d = (v - x).abs();
                // strict < keeps the lower member on exact ties
                if d < best_d - 1e-12 {
                    best = i;
                    best_d = d;
                }
            }
            best
        }
        self.point_at([
            nearest(self.core_counts.iter().map(|&c| f64::from(c)), cores),
            nearest(self.frequencies_ghz.iter().copied(), ghz),
            nearest(self.lidar_rates_hz.iter().map(|&l| f64::from(l)), lidar_hz),
        ])
    }
}

/// Full Cartesian product in lexicographic (cores, frequency, lidar) order.
pub fn enumerate(space: &DesignSpace) -> Vec<DesignPoint> {
    let mut out = Vec::with_capacity(space.len());
    for &c in &space.core_counts {
        for &f in &space.frequencies_ghz {
            for &l in &space.lidar_rates_hz {
                out.push(DesignPoint::new(c, f, l));
            }
        }
    }
    out
}

/// Cost in exact integer units of core·MHz, for comparisons.
pub fn hardware_cost_milli(p: &DesignPoint) -> u64 {
    u64::from(p.cores) * (p.core_frequency_ghz * 1000.0).round() as u64
}

/// Aggregate CPU capacity, cores × GHz.
pub fn hardware_cost(p: &DesignPoint) -> f64 {
    // Going through the integer form yields the correctly rounded decimal
    // (14 × 1.2 is 16.8, not 16.799999999999997).
    hardware_cost_milli(p) as f64 / 1000.0
}

/// Membership check naming the first offending field.
pub fn validate(p: &DesignPoint, space: &DesignSpace) -> Validity {
    if space.core_counts.binary_search(&p.cores).is_err() {
        Validity::Invalid(Axis::Cores)
    } else if space.frequency_index(p.core_frequency_ghz).is_none() {
        Validity::Invalid(Axis::Frequency)
    } else if space.lidar_rates_hz.binary_search(&p.lidar_hz).is_err() {
        Validity::Invalid(Axis::Lidar)
    } else {
        Validity::Valid
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("constraint {0} must be strictly positive and finite")]
pub struct ConstraintError(pub &'static str);

/// Task-level limits a design must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraints")]
pub struct Constraints {
    pub max_nav_time_s: f64,
    pub min_ctrl_rate_hz: f64,
}

#[derive(Deserialize)]
struct RawConstraints {
    max_nav_time_s: f64,
    min_ctrl_rate_hz: f64,
}

impl TryFrom<RawConstraints> for Constraints {
    type Error = ConstraintError;
    fn try_from(r: RawConstraints) -> Result<Self, Self::Error> {
        Constraints::new(r.max_nav_time_s, r.min_ctrl_rate_hz)
    }
}

impl Constraints {
    pub fn new(max_nav_time_s: f64, min_ctrl_rate_hz: f64) -> Result<Self, ConstraintError> {
        if !(max_nav_time_s.is_finite() && max_nav_time_s > 0.0) {
            return Err(ConstraintError("max_nav_time_s"));
        }
        if !(min_ctrl_rate_hz.is_finite() && min_ctrl_rate_hz > 0.0) {
            return Err(ConstraintError("min_ctrl_rate_hz"));
        }
        Ok(Self {
            max_nav_time_s,
            min_ctrl_rate_hz,
        })
    }
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            max_nav_time_s: 400.0,
            min_ctrl_rate_hz: 1.0,
        }
    }
}

/// Outcome of evaluating one design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Start-to-goal time; the timeout value when the goal was not reached.
    pub nav_time_s: f64,
    /// Normalized trajectory deviation; absent for incomplete runs.
    pub deviation_score: Option<f64>,
    pub ctrl_rate_hz: f64,
    pub hw_cost: f64,
    pub goal_reached: bool,
}

/// Goal reached, within the time limit (inclusive), and control rate strictly
/// above the minimum.
pub fn is_feasible(m: &Metrics, c: &Constraints) -> bool {
    m.goal_reached && m.nav_time_s <= c.max_nav_time_s && m.ctrl_rate_hz > c.min_ctrl_rate_hz
}
