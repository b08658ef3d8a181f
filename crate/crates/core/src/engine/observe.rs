//! Observation hooks for the stepping loop.
//!
//! The engine pushes three kinds of events: a vehicle entering the network, a
//! vehicle leaving it, and the full vehicle slice at the end of every step.
//! Metrics accumulate from these events without the engine knowing about them;
//! the in-memory [`TrajectoryLog`] exists for tests and offline replay, while
//! [`TrajectoryCsvWriter`] streams rows to disk without buffering a run.

use std::collections::BTreeMap;
use std::io;

use super::{VehKind, VehicleState};
use crate::net::CompiledNet;

/// Receives simulation events as they happen.
///
/// `t` is simulation time in seconds. `on_enter`/`on_exit` fire when a vehicle
/// is placed on or removed from the network; `on_step` fires once per step
/// after integration and carries every vehicle still present. A vehicle that
/// exits during a step is not in that step's slice.
pub trait StepObserver {
    fn on_enter(&mut self, _t: f64, _veh: &VehicleState) {}
    fn on_exit(&mut self, _t: f64, _veh: &VehicleState) {}
    fn on_step(&mut self, _t: f64, _vehicles: &[VehicleState]) {}
}

/// Discards all events.
pub struct NullObserver;

impl StepObserver for NullObserver {}

/// Fans events out to several observers in order.
pub struct Observers<'a>(pub Vec<&'a mut dyn StepObserver>);

impl StepObserver for Observers<'_> {
    fn on_enter(&mut self, t: f64, veh: &VehicleState) {
        for obs in &mut self.0 {
            obs.on_enter(t, veh);
        }
    }

    fn on_exit(&mut self, t: f64, veh: &VehicleState) {
        for obs in &mut self.0 {
            obs.on_exit(t, veh);
        }
    }

    fn on_step(&mut self, t: f64, vehicles: &[VehicleState]) {
        for obs in &mut self.0 {
            obs.on_step(t, vehicles);
        }
    }
}

/// Static facts about one vehicle's trip.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleRecord {
    pub id: u32,
    pub kind: VehKind,
    pub route: u32,
    pub desired_factor: f64,
    pub length_m: f64,
    pub entry_time_s: f64,
    pub exit_time_s: Option<f64>,
}

/// One vehicle at one step end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRow {
    pub t: f64,
    pub veh: u32,
    pub kind: VehKind,
    pub link: u32,
    pub lane: u32,
    pub offset_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
}

/// Complete in-memory recording of a run.
///
/// Memory grows as vehicles × steps; intended for unit tests and short
/// replays, not hour-long corridor runs (stream those instead).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub vehicles: BTreeMap<u32, VehicleRecord>,
    pub rows: Vec<StepRow>,
    /// Number of steps observed, including ones with no vehicle present
    /// (those leave no rows but still count toward time averages).
    pub steps_total: u64,
}

impl TrajectoryLog {
    pub fn new(dt: f64) -> Self {
        Self { dt, vehicles: BTreeMap::new(), rows: Vec::new(), steps_total: 0 }
    }

    /// Rows of one step, in ascending vehicle id (the order they were pushed).
    pub fn steps(&self) -> impl Iterator<Item = &[StepRow]> {
        self.rows.chunk_by(|a, b| a.t == b.t)
    }

    pub fn write_csv<W: io::Write>(&self, net: &CompiledNet, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", TRAJECTORY_HEADER)?;
        for row in &self.rows {
            write_row(&mut out, net, row)?;
        }
        Ok(())
    }
}

impl StepObserver for TrajectoryLog {
    fn on_enter(&mut self, t: f64, veh: &VehicleState) {
        self.vehicles.insert(
            veh.id,
            VehicleRecord {
                id: veh.id,
                kind: veh.kind,
                route: veh.route,
                desired_factor: veh.desired_factor,
                length_m: veh.length_m,
                entry_time_s: t,
                exit_time_s: None,
            },
        );
    }

    fn on_exit(&mut self, t: f64, veh: &VehicleState) {
        if let Some(rec) = self.vehicles.get_mut(&veh.id) {
            rec.exit_time_s = Some(t);
        }
    }

    fn on_step(&mut self, t: f64, vehicles: &[VehicleState]) {
        self.steps_total += 1;
        for veh in vehicles {
            self.rows.push(StepRow {
                t,
                veh: veh.id,
                kind: veh.kind,
                link: veh.pos.link,
                lane: veh.pos.lane,
                offset_m: veh.pos.offset_m,
                speed_mps: veh.v,
                accel_mps2: veh.a,
            });
        }
    }
}

pub const TRAJECTORY_HEADER: &str = "t,veh_id,kind,link,offset_m,speed_mps,accel_mps2";

fn write_row<W: io::Write>(out: &mut W, net: &CompiledNet, row: &StepRow) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        row.t,
        row.veh,
        row.kind,
        net.link_id(row.link),
        row.offset_m,
        row.speed_mps,
        row.accel_mps2
    )
}

/// Streams per-step rows as CSV without holding the run in memory.
///
/// I/O errors are sticky: the first one stops further writing and is returned
/// by [`TrajectoryCsvWriter::finish`].
pub struct TrajectoryCsvWriter<'n, W: io::Write> {
    net: &'n CompiledNet,
    out: W,
    error: Option<io::Error>,
}

impl<'n, W: io::Write> TrajectoryCsvWriter<'n, W> {
    pub fn new(net: &'n CompiledNet, mut out: W) -> io::Result<Self> {
        writeln!(out, "{}", TRAJECTORY_HEADER)?;
        Ok(Self { net, out, error: None })
    }

    pub fn finish(mut self) -> io::Result<()> {
        match self.error.take() {
            Some(err) => Err(err),
            None => self.out.flush(),
        }
    }
}

impl<W: io::Write> StepObserver for TrajectoryCsvWriter<'_, W> {
    fn on_step(&mut self, t: f64, vehicles: &[VehicleState]) {
        if self.error.is_some() {
            return;
        }
        for veh in vehicles {
            let row = StepRow {
                t,
                veh: veh.id,
                kind: veh.kind,
                link: veh.pos.link,
                lane: veh.pos.lane,
                offset_m: veh.pos.offset_m,
                speed_mps: veh.v,
                accel_mps2: veh.a,
            };
            if let Err(err) = write_row(&mut self.out, self.net, &row) {
                self.error = Some(err);
                return;
            }
        }
    }
}
