//! Driver behavior: psycho-physical human car following, constant-time-gap
//! automated following, signal/stop-sign compliance and lane changing.
//!
//! All functions in this module are pure; the engine owns every piece of
//! mutable state and feeds it in explicitly, which keeps replications
//! reproducible bit-for-bit.

mod control;
mod following;
mod lane_change;

pub use control::{
    signal_constraint, stop_sign_constraint, SignalState, StopSignProgress,
    STOP_TARGET_SETBACK_M,
};
pub use following::{av_accel, av_desired_gap, human_accel, w74_safety_distance};
pub(crate) use following::{hard_stop_gap, max_speed_for_gap};
pub use lane_change::{
    lane_change_decision, Follower, LaneChangeInput, LcDecision, Mandatory, Neighbor, SideContext,
};

use serde::{Deserialize, Serialize};

/// What a driver can see ahead of it, nearest first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectKind {
    Vehicle,
    SignalStopLine,
    StopSignLine,
    /// End of the vehicle's route: informational, never braked for.
    RouteEnd,
    /// Current lane stops continuing the route (lane drop / missing
    /// connector): treated as a stationary wall.
    LaneEnd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerceivedObject {
    pub kind: ObjectKind,
    /// Front bumper to rear bumper (or to line), meters, non-negative.
    pub gap: f64,
    /// Object speed in m/s; 0 for lines and lane ends.
    pub speed: f64,
}

/// Constraining objects ahead, sorted by increasing gap, truncated to the
/// driver's perception count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Perception {
    pub objects: Vec<PerceivedObject>,
}

impl Perception {
    pub fn new(mut objects: Vec<PerceivedObject>, limit: usize) -> Self {
        objects.sort_by(|a, b| a.gap.partial_cmp(&b.gap).expect("gap is never NaN"));
        objects.truncate(limit);
        Perception { objects }
    }

    pub fn empty() -> Self {
        Perception { objects: Vec::new() }
    }
}

/// Acceleration capability over speed: per grid point the weakest, median and
/// strongest driver value. A per-driver percentile interpolates min..max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelCurve {
    /// (speed m/s, min, median, max), strictly increasing in speed.
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl AccelCurve {
    /// Shared base shape; medians are monotone non-increasing beyond 5 m/s.
    pub fn default_median_points() -> Vec<(f64, f64)> {
        vec![
            (0.0, 3.5),
            (5.0, 3.5),
            (10.0, 2.8),
            (15.0, 2.2),
            (20.0, 1.8),
            (25.0, 1.4),
            (30.0, 1.1),
            (40.0, 0.8),
        ]
    }

    /// Human default: +/- `spread` (fraction of median) between weakest and
    /// strongest drivers.
    pub fn human_default(spread: f64) -> Self {
        let points = Self::default_median_points()
            .into_iter()
            .map(|(v, m)| (v, m * (1.0 - spread), m, m * (1.0 + spread)))
            .collect();
        AccelCurve { points }
    }

    /// Automated default: the human median with the spread collapsed.
    pub fn av_default() -> Self {
        let points = Self::default_median_points()
            .into_iter()
            .map(|(v, m)| (v, m, m, m))
            .collect();
        AccelCurve { points }
    }

    fn lerp_row(&self, v: f64) -> (f64, f64, f64) {
        let pts = &self.points;
        if v <= pts[0].0 {
            let p = pts[0];
            return (p.1, p.2, p.3);
        }
        let last = pts[pts.len() - 1];
        if v >= last.0 {
            return (last.1, last.2, last.3);
        }
        let i = pts.partition_point(|p| p.0 <= v);
        let (a, b) = (pts[i - 1], pts[i]);
        let t = (v - a.0) / (b.0 - a.0);
        (
            a.1 + t * (b.1 - a.1),
            a.2 + t * (b.2 - a.2),
            a.3 + t * (b.3 - a.3),
        )
    }

    pub fn median(&self, v: f64) -> f64 {
        self.lerp_row(v).1
    }

    /// Percentile 0 = weakest, 0.5 = median (curves here are symmetric),
    /// 1 = strongest.
    pub fn sample(&self, v: f64, percentile: f64) -> f64 {
        let (lo, _, hi) = self.lerp_row(v);
        let p = percentile.clamp(0.0, 1.0);
        lo + p * (hi - lo)
    }

    pub fn max_at(&self, v: f64) -> f64 {
        self.lerp_row(v).2
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.points.is_empty() {
            return Err("acceleration curve has no grid points".into());
        }
        let mut prev_v = f64::NEG_INFINITY;
        let mut prev_med: Option<f64> = None;
        for &(v, lo, med, hi) in &self.points {
            if v <= prev_v {
                return Err("acceleration curve speeds must be strictly increasing".into());
            }
            if !(lo <= med && med <= hi) {
                return Err("acceleration curve needs min <= median <= max".into());
            }
            if v >= 5.0 {
                if let Some(pm) = prev_med {
                    if med > pm + 1e-12 {
                        return Err("median acceleration must not increase beyond 5 m/s".into());
                    }
                }
                prev_med = Some(med);
            }
            prev_v = v;
        }
        Ok(())
    }
}

/// Per-vehicle human parameters; the stochastic fields (z, percentile,
/// desired_speed) are drawn once at spawn.
#[derive(Clone, Debug, PartialEq)]
pub struct W74Params {
    pub ax: f64,
    pub bx_add: f64,
    pub bx_mult: f64,
    /// Driver aggressiveness draw in [0, 1]; larger keeps longer gaps.
    pub z: f64,
    pub desired_speed: f64,
    pub accel_percentile: f64,
    pub b_comf: f64,
    pub b_max: f64,
    pub b_accept: f64,
    pub gain_speed: f64,
    pub gain_gap: f64,
    pub sdx_factor: f64,
    pub perception_count: usize,
}

impl W74Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.z) {
            return Err("z must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("ax", self.ax),
            ("bx_add", self.bx_add),
            ("bx_mult", self.bx_mult),
            ("desired_speed", self.desired_speed),
            ("b_comf", self.b_comf),
            ("b_max", self.b_max),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(format!("{name} must be positive and finite"));
            }
        }
        if self.b_max < self.b_comf {
            return Err("b_max must be >= b_comf".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvParams {
    pub s0: f64,
    pub t_gap: f64,
    pub k_gap: f64,
    pub k_speed: f64,
    pub desired_speed: f64,
    pub b_comf: f64,
    pub b_max: f64,
    pub b_accept: f64,
    pub coop_lane_change: bool,
    pub perception_count: usize,
}

impl AvParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("s0", self.s0),
            ("t_gap", self.t_gap),
            ("k_gap", self.k_gap),
            ("k_speed", self.k_speed),
            ("desired_speed", self.desired_speed),
            ("b_comf", self.b_comf),
            ("b_max", self.b_max),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(format!("{name} must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DriverParams {
    Human(W74Params),
    Av(AvParams),
}

impl DriverParams {
    pub fn is_av(&self) -> bool {
        matches!(self, DriverParams::Av(_))
    }

    pub fn perception_count(&self) -> usize {
        match self {
            DriverParams::Human(p) => p.perception_count,
            DriverParams::Av(p) => p.perception_count,
        }
    }

    pub fn b_comf(&self) -> f64 {
        match self {
            DriverParams::Human(p) => p.b_comf,
            DriverParams::Av(p) => p.b_comf,
        }
    }

    pub fn b_accept(&self) -> f64 {
        match self {
            DriverParams::Human(p) => p.b_accept,
            DriverParams::Av(p) => p.b_accept,
        }
    }

    pub fn b_max(&self) -> f64 {
        match self {
            DriverParams::Human(p) => p.b_max,
            DriverParams::Av(p) => p.b_max,
        }
    }

    /// Gap the driver is content to follow at: the spacing its law settles to
    /// at speed `v`.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        match self {
            DriverParams::Human(p) => w74_safety_distance(v, p),
            DriverParams::Av(p) => av_desired_gap(v, p),
        }
    }

    /// Bumper-to-bumper spacing at standstill.
    pub fn standstill_gap(&self) -> f64 {
        match self {
            DriverParams::Human(p) => p.ax,
            DriverParams::Av(p) => p.s0,
        }
    }
}

/// Scenario-level behavior settings; every constant of the driver model can
/// be overridden from the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    pub human: HumanConfig,
    pub av: AvConfig,
    pub vehicle_length_m: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            human: HumanConfig::default(),
            av: AvConfig::default(),
            vehicle_length_m: 4.5,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.human_curve().validate()?;
        self.av_curve().validate()?;
        if self.vehicle_length_m <= 0.0 {
            return Err("vehicle_length_m must be positive".into());
        }
        // Automated gaps must undercut the human ones: compare the implied
        // time gaps at a typical urban speed.
        let v: f64 = 13.9;
        let human_time_gap = (self.human.bx_add + self.human.bx_mult * 0.5) * v.sqrt() / v;
        if self.av.t_gap >= human_time_gap {
            return Err(format!(
                "av t_gap {} must be below the human effective time gap {human_time_gap:.3}",
                self.av.t_gap
            ));
        }
        Ok(())
    }

    pub fn human_curve(&self) -> AccelCurve {
        AccelCurve::human_default(self.human.curve_spread)
    }

    pub fn av_curve(&self) -> AccelCurve {
        AccelCurve::av_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanConfig {
    pub ax: f64,
    pub bx_add: f64,
    pub bx_mult: f64,
    pub b_comf: f64,
    pub b_max: f64,
    pub b_accept: f64,
    pub gain_speed: f64,
    pub gain_gap: f64,
    pub sdx_factor: f64,
    pub curve_spread: f64,
    pub perception_count: usize,
}

impl Default for HumanConfig {
    fn default() -> Self {
        HumanConfig {
            ax: 2.0,
            bx_add: 2.0,
            bx_mult: 3.0,
            b_comf: 3.0,
            b_max: 3.5,
            b_accept: 2.0,
            gain_speed: 0.5,
            gain_gap: 0.25,
            sdx_factor: 1.5,
            curve_spread: 0.3,
            perception_count: 2,
        }
    }
}

impl HumanConfig {
    /// Instantiate one driver from its spawn-time draws.
    pub fn instantiate(&self, z: f64, percentile: f64, desired_speed: f64) -> W74Params {
        W74Params {
            ax: self.ax,
            bx_add: self.bx_add,
            bx_mult: self.bx_mult,
            z,
            desired_speed,
            accel_percentile: percentile,
            b_comf: self.b_comf,
            b_max: self.b_max,
            b_accept: self.b_accept,
            gain_speed: self.gain_speed,
            gain_gap: self.gain_gap,
            sdx_factor: self.sdx_factor,
            perception_count: self.perception_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvConfig {
    pub s0: f64,
    pub t_gap: f64,
    pub k_gap: f64,
    pub k_speed: f64,
    pub b_comf: f64,
    pub b_max: f64,
    pub b_accept: f64,
    pub coop_lane_change: bool,
    pub perception_count: usize,
}

impl Default for AvConfig {
    fn default() -> Self {
        AvConfig {
            s0: 1.0,
            t_gap: 0.6,
            k_gap: 0.23,
            k_speed: 0.74,
            b_comf: 3.0,
            b_max: 3.5,
            b_accept: 3.0,
            coop_lane_change: true,
            perception_count: 10,
        }
    }
}

impl AvConfig {
    pub fn instantiate(&self, desired_speed: f64) -> AvParams {
        AvParams {
            s0: self.s0,
            t_gap: self.t_gap,
            k_gap: self.k_gap,
            k_speed: self.k_speed,
            desired_speed,
            b_comf: self.b_comf,
            b_max: self.b_max,
            b_accept: self.b_accept,
            coop_lane_change: self.coop_lane_change,
            perception_count: self.perception_count,
        }
    }
}
