//! Post-run evaluation: fuel and emission totals, queue lengths, delays,
//! stop counts, per-vehicle normalization and benefit percentages.
//!
//! Every result can be computed two ways with identical output: replayed
//! from a recorded [`TrajectoryLog`](crate::engine::TrajectoryLog) (tests,
//! offline analysis of a saved run) or streamed during the simulation by
//! [`MetricsAccumulator`] (the experiment harness, which never materializes
//! hour-long logs).

mod accumulate;

pub use accumulate::{node_evaluation, queue_series, MetricsAccumulator, ScopedResults};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::TrajectoryLog;
use crate::net::CompiledNet;

/// Speed below which a vehicle accrues stopped time.
pub const STOPPED_SPEED_MPS: f64 = 0.1;
/// A stop event fires when speed drops below this while the counter is
/// armed...
pub const STOP_EVENT_ENTER_MPS: f64 = 0.2;
/// ...and re-arms once speed recovers above this.
pub const STOP_EVENT_REARM_MPS: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("queue series is empty")]
    EmptySeries,
    #[error("base per-vehicle value must be positive, got {0}")]
    NonPositiveBase(f64),
}

/// One rate polynomial: units per hour as a function of speed and positive
/// acceleration, `c0 + c1*v + c3*v^3 + c_a*max(a,0)*v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c3: f64,
    pub c_a: f64,
}

impl RateCoefficients {
    /// Instantaneous rate in units/hour at speed `v` (m/s) and acceleration
    /// `a` (m/s^2); deceleration contributes nothing.
    pub fn rate(&self, v: f64, a: f64) -> f64 {
        self.c0 + self.c1 * v + self.c3 * v * v * v + self.c_a * a.max(0.0) * v
    }

    fn validate(&self, name: &str) -> Result<(), String> {
        for (field, c) in [("c0", self.c0), ("c1", self.c1), ("c3", self.c3), ("c_a", self.c_a)] {
            if !c.is_finite() || c < 0.0 {
                return Err(format!("{name}.{field} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Rate polynomials for the four tracked quantities. Fuel in US gallons per
/// hour, emissions in grams per hour. Defaults are transparent plausible
/// calibrations (about 39 mpg at a steady 13.4 m/s) and can be overridden
/// wholesale from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuelEmissionModel {
    pub fuel: RateCoefficients,
    pub co: RateCoefficients,
    pub nox: RateCoefficients,
    pub voc: RateCoefficients,
}

impl Default for FuelEmissionModel {
    fn default() -> Self {
        FuelEmissionModel {
            fuel: RateCoefficients { c0: 0.30, c1: 0.032, c3: 1.8e-5, c_a: 0.09 },
            co: RateCoefficients { c0: 20.0, c1: 1.5, c3: 0.0, c_a: 4.0 },
            nox: RateCoefficients { c0: 2.0, c1: 0.25, c3: 0.0, c_a: 0.6 },
            voc: RateCoefficients { c0: 3.0, c1: 0.3, c3: 0.0, c_a: 0.5 },
        }
    }
}

impl FuelEmissionModel {
    /// Non-negative coefficients make every rate non-negative and
    /// non-decreasing in positive acceleration over the whole state space.
    pub fn validate(&self) -> Result<(), String> {
        self.fuel.validate("fuel")?;
        self.co.validate("co")?;
        self.nox.validate("nox")?;
        self.voc.validate("voc")
    }
}

/// Queue membership thresholds: a vehicle joins a queue below `enter_mps`,
/// stays until it exceeds `exit_mps` (hysteresis band), and chains to the
/// vehicle ahead while the bumper gap is at most `max_spacing_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub enter_mps: f64,
    pub exit_mps: f64,
    pub max_spacing_m: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig { enter_mps: 1.39, exit_mps: 2.78, max_spacing_m: 20.0 }
    }
}

impl QueueConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.enter_mps > 0.0 && self.exit_mps > self.enter_mps) {
            return Err("queue thresholds need exit > enter > 0".into());
        }
        if self.max_spacing_m <= 0.0 {
            return Err("queue max spacing must be positive".into());
        }
        Ok(())
    }
}

/// What part of the network a result is attributed over: the evaluation
/// node's capture windows, or everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Node,
    FullNetwork,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Node => "node",
            Scope::FullNetwork => "full",
        })
    }
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node" => Ok(Scope::Node),
            "full" => Ok(Scope::FullNetwork),
            other => Err(format!("unknown scope '{other}' (expected 'node' or 'full')")),
        }
    }
}

/// Totals of the four integrated quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuantityTotals {
    pub fuel_gal: f64,
    pub co_g: f64,
    pub nox_g: f64,
    pub voc_g: f64,
}

impl QuantityTotals {
    pub(crate) fn add_sample(&mut self, model: &FuelEmissionModel, v: f64, a: f64, dt: f64) {
        let h = dt / 3600.0;
        self.fuel_gal += model.fuel.rate(v, a) * h;
        self.co_g += model.co.rate(v, a) * h;
        self.nox_g += model.nox.rate(v, a) * h;
        self.voc_g += model.voc.rate(v, a) * h;
    }
}

/// Network-wide delay and stop figures.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DelayStats {
    /// Mean over exited vehicles of actual minus free-flow travel time.
    pub avg_delay_s: f64,
    /// Total time below [`STOPPED_SPEED_MPS`] divided by vehicles seen.
    pub avg_stopped_delay_s: f64,
    pub total_stops: u64,
}

/// Full evaluation of one run under one scope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeEvaluationResult {
    pub scope: Scope,
    /// Vehicles that entered the scope region during the run.
    pub vehicle_count: u64,
    pub total_fuel_gal: f64,
    pub fuel_per_vehicle_gal: f64,
    pub co_g: f64,
    pub co_per_vehicle_g: f64,
    pub nox_g: f64,
    pub nox_per_vehicle_g: f64,
    pub voc_g: f64,
    pub voc_per_vehicle_g: f64,
    pub avg_queue_m: f64,
    pub max_queue_m: f64,
    /// Whole-trip delay, averaged over exited vehicles that touched the
    /// scope; vehicles still driving at the horizon contribute everything
    /// else but not this.
    pub avg_delay_s: f64,
    pub avg_stopped_delay_s: f64,
    pub total_stops: u64,
}

/// `total / vehicle_count`, with the empty convention of zero.
pub fn per_vehicle(total: f64, vehicle_count: u64) -> f64 {
    if vehicle_count == 0 {
        0.0
    } else {
        total / vehicle_count as f64
    }
}

/// Relative improvement of `case` over `base` in percent; positive when
/// `case` consumes less.
pub fn percent_benefit(base_per_vehicle: f64, case_per_vehicle: f64) -> Result<f64, MetricsError> {
    if base_per_vehicle <= 0.0 {
        return Err(MetricsError::NonPositiveBase(base_per_vehicle));
    }
    Ok(100.0 * (base_per_vehicle - case_per_vehicle) / base_per_vehicle)
}

/// Integrate the four quantity rates over every logged step inside the
/// scope region: each present vehicle contributes rate(v, a) * dt / 3600.
pub fn integrate_quantities(
    log: &TrajectoryLog,
    net: &CompiledNet,
    scope: Scope,
    model: &FuelEmissionModel,
) -> QuantityTotals {
    let region = accumulate::ScopeRegion::new(net, scope);
    let mut totals = QuantityTotals::default();
    for row in &log.rows {
        if region.contains(row.link, row.offset_m) {
            totals.add_sample(model, row.speed_mps, row.accel_mps2, log.dt);
        }
    }
    totals
}

/// Mean of a per-approach queue series over every step and approach, and
/// its maximum. Errors when there is nothing to average.
pub fn queue_summary(series: &[Vec<f64>]) -> Result<(f64, f64), MetricsError> {
    let mut sum = 0.0;
    let mut n = 0u64;
    let mut max = 0.0f64;
    for approach in series {
        for &q in approach {
            sum += q;
            n += 1;
            max = max.max(q);
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptySeries);
    }
    Ok((sum / n as f64, max))
}

/// Whole-network delay and stop statistics for a completed log.
///
/// Delay compares each exited vehicle's travel time against its own
/// free-flow time (its desired-speed factor applied per link); stop events
/// count with hysteresis so creeping in a queue is one stop, not dozens.
pub fn delays(log: &TrajectoryLog, net: &CompiledNet) -> DelayStats {
    use std::collections::HashMap;

    #[derive(Clone, Copy)]
    struct StopState {
        armed: bool,
    }

    let mut states: HashMap<u32, StopState> = HashMap::new();
    let mut stopped_time = 0.0;
    let mut stops = 0u64;
    for row in &log.rows {
        let st = states.entry(row.veh).or_insert(StopState { armed: true });
        if row.speed_mps < STOPPED_SPEED_MPS {
            stopped_time += log.dt;
        }
        if st.armed && row.speed_mps < STOP_EVENT_ENTER_MPS {
            st.armed = false;
            stops += 1;
        } else if !st.armed && row.speed_mps > STOP_EVENT_REARM_MPS {
            st.armed = true;
        }
    }

    let mut delay_sum = 0.0;
    let mut exited = 0u64;
    for rec in log.vehicles.values() {
        if let Some(exit_t) = rec.exit_time_s {
            let actual = exit_t - rec.entry_time_s;
            let free_flow = net.factor_travel_time(rec.route, rec.desired_factor);
            delay_sum += actual - free_flow;
            exited += 1;
        }
    }

    DelayStats {
        avg_delay_s: per_vehicle(delay_sum, exited),
        avg_stopped_delay_s: per_vehicle(stopped_time, log.vehicles.len() as u64),
        total_stops: stops,
    }
}
