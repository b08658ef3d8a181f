//! One-pass metric aggregation, shared by the streaming observer and the
//! log replay so both produce identical numbers.

use std::collections::HashMap;

use crate::engine::{StepObserver, TrajectoryLog, VehicleState};
use crate::net::{CompiledNet, EvalNodeData};

use super::{
    per_vehicle, FuelEmissionModel, NodeEvaluationResult, QuantityTotals, QueueConfig, Scope,
    STOPPED_SPEED_MPS, STOP_EVENT_ENTER_MPS, STOP_EVENT_REARM_MPS,
};

/// Minimal per-vehicle slice of one step, common to live and replayed runs.
#[derive(Clone, Copy, Debug)]
pub(super) struct Sample {
    pub veh: u32,
    pub link: u32,
    pub lane: u32,
    pub offset_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub length_m: f64,
}

/// Membership test for a scope's capture region.
pub(super) struct ScopeRegion {
    /// Per-link capture windows as (low, high) offsets; `None` means the
    /// whole network is in scope.
    windows: Option<Vec<Vec<(f64, f64)>>>,
}

impl ScopeRegion {
    pub(super) fn new(net: &CompiledNet, scope: Scope) -> Self {
        match scope {
            Scope::FullNetwork => ScopeRegion { windows: None },
            Scope::Node => {
                let mut windows = vec![Vec::new(); net.link_count()];
                for node in net.eval_nodes() {
                    for &(link, stop) in &node.approaches {
                        windows[link as usize].push(((stop - node.capture_m).max(0.0), stop));
                    }
                }
                ScopeRegion { windows: Some(windows) }
            }
        }
    }

    pub(super) fn contains(&self, link: u32, offset_m: f64) -> bool {
        match &self.windows {
            None => true,
            Some(windows) => windows[link as usize]
                .iter()
                .any(|&(lo, hi)| offset_m >= lo && offset_m <= hi),
        }
    }
}

/// One queue-measuring stop line: the link it sits on, its offset, and how
/// far upstream a queue head may be detected.
#[derive(Clone, Copy, Debug)]
struct Approach {
    link: u32,
    stop_m: f64,
    capture_m: f64,
}

/// Back-to-front queue measurement for one lane.
///
/// `lane_desc` holds `(offset, length, queued)` for every vehicle of one
/// lane at or upstream of the stop line, sorted by descending offset. The
/// queue head is the queued vehicle nearest the line whose distance to it is
/// within the capture window; the chain then extends upstream through
/// consecutive queued vehicles with at most `max_spacing_m` bumper-to-bumper,
/// and the reported length runs from the stop line to the rear bumper of the
/// last chained vehicle (which may lie beyond the capture window).
fn lane_queue_m(lane_desc: &[(f64, f64, bool)], stop_m: f64, capture_m: f64, qc: &QueueConfig) -> f64 {
    let mut iter = lane_desc.iter();
    while let Some(&(offset, length, queued)) = iter.next() {
        if !queued {
            continue; // discharging vehicle between the line and the queue
        }
        if stop_m - offset > capture_m {
            return 0.0; // nearest queued vehicle is already out of range
        }
        let mut rear = offset - length;
        for &(next_offset, next_length, next_queued) in iter {
            if !next_queued || rear - next_offset > qc.max_spacing_m {
                break;
            }
            rear = next_offset - next_length;
        }
        return stop_m - rear;
    }
    0.0
}

#[derive(Clone, Copy, Debug)]
struct VehInfo {
    route: u32,
    desired_factor: f64,
    entry_time_s: f64,
    exit_time_s: Option<f64>,
    /// Queue-membership hysteresis state.
    queued: bool,
    /// Stop-event state: armed until a stop fires, re-arms on recovery.
    stop_armed: bool,
    touched_node: bool,
    /// Seen on the network at all (guards against records without steps).
    touched_full: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct ScopeSums {
    totals: QuantityTotals,
    stopped_time_s: f64,
    stops: u64,
}

/// The single aggregation core. Feed it enter/step/exit events in
/// simulation order; `finish` turns the sums into results for both scopes.
struct AccumCore<'n> {
    net: &'n CompiledNet,
    model: FuelEmissionModel,
    qc: QueueConfig,
    dt: f64,
    node_region: ScopeRegion,
    approaches: Vec<Approach>,
    /// Links that carry at least one approach, for cheap bucketing.
    link_watched: Vec<bool>,
    /// Scratch: per watched link, `(lane, offset, length, queued)` of every
    /// vehicle on it this step.
    link_bufs: Vec<Vec<(u32, f64, f64, bool)>>,
    info: HashMap<u32, VehInfo>,
    node: ScopeSums,
    full: ScopeSums,
    queue_sum: f64,
    queue_samples: u64,
    queue_max: f64,
    steps: u64,
}

impl<'n> AccumCore<'n> {
    fn new(net: &'n CompiledNet, dt: f64, model: FuelEmissionModel, qc: QueueConfig) -> Self {
        let mut approaches = Vec::new();
        for node in net.eval_nodes() {
            for &(link, stop) in &node.approaches {
                approaches.push(Approach { link, stop_m: stop, capture_m: node.capture_m });
            }
        }
        let mut link_watched = vec![false; net.link_count()];
        for a in &approaches {
            link_watched[a.link as usize] = true;
        }
        AccumCore {
            node_region: ScopeRegion::new(net, Scope::Node),
            link_bufs: vec![Vec::new(); net.link_count()],
            net,
            model,
            qc,
            dt,
            approaches,
            link_watched,
            info: HashMap::new(),
            node: ScopeSums::default(),
            full: ScopeSums::default(),
            queue_sum: 0.0,
            queue_samples: 0,
            queue_max: 0.0,
            steps: 0,
        }
    }

    fn enter(&mut self, t: f64, veh: u32, route: u32, desired_factor: f64) {
        self.info.insert(
            veh,
            VehInfo {
                route,
                desired_factor,
                entry_time_s: t,
                exit_time_s: None,
                queued: false,
                stop_armed: true,
                touched_node: false,
                touched_full: false,
            },
        );
    }

    fn exit(&mut self, t: f64, veh: u32) {
        if let Some(info) = self.info.get_mut(&veh) {
            info.exit_time_s = Some(t);
        }
    }

    fn step(&mut self, samples: &[Sample]) {
        self.steps += 1;
        for s in samples {
            let info = self
                .info
                .get_mut(&s.veh)
                .expect("step sample for a vehicle that never entered");
            if s.speed_mps < self.qc.enter_mps {
                info.queued = true;
            } else if s.speed_mps > self.qc.exit_mps {
                info.queued = false;
            }
            let in_node = self.node_region.contains(s.link, s.offset_m);
            info.touched_node |= in_node;
            info.touched_full = true;

            self.full.totals.add_sample(&self.model, s.speed_mps, s.accel_mps2, self.dt);
            if in_node {
                self.node.totals.add_sample(&self.model, s.speed_mps, s.accel_mps2, self.dt);
            }
            if s.speed_mps < STOPPED_SPEED_MPS {
                self.full.stopped_time_s += self.dt;
                if in_node {
                    self.node.stopped_time_s += self.dt;
                }
            }
            if info.stop_armed && s.speed_mps < STOP_EVENT_ENTER_MPS {
                info.stop_armed = false;
                self.full.stops += 1;
                if in_node {
                    self.node.stops += 1;
                }
            } else if !info.stop_armed && s.speed_mps > STOP_EVENT_REARM_MPS {
                info.stop_armed = true;
            }

            let queued_now = info.queued;
            if self.link_watched[s.link as usize] {
                self.link_bufs[s.link as usize].push((s.lane, s.offset_m, s.length_m, queued_now));
            }
        }

        for (link, watched) in self.link_watched.iter().enumerate() {
            if *watched {
                self.link_bufs[link].sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            }
        }
        for a in &self.approaches {
            let q = approach_queue_m(&self.link_bufs[a.link as usize], a, &self.qc);
            self.queue_sum += q;
            self.queue_samples += 1;
            self.queue_max = self.queue_max.max(q);
        }
        for (link, watched) in self.link_watched.iter().enumerate() {
            if *watched {
                self.link_bufs[link].clear();
            }
        }
    }

    fn finish(self) -> ScopedResults {
        let mut ordered: Vec<(u32, VehInfo)> = self.info.into_iter().collect();
        ordered.sort_by_key(|(id, _)| *id);

        let mut node_count = 0u64;
        let mut full_count = 0u64;
        let delay = |infos: &[(u32, VehInfo)], node_only: bool| {
            let mut sum = 0.0;
            let mut exited = 0u64;
            for (_, info) in infos {
                if !(if node_only { info.touched_node } else { info.touched_full }) {
                    continue;
                }
                if let Some(exit_t) = info.exit_time_s {
                    let free_flow = self.net.factor_travel_time(info.route, info.desired_factor);
                    sum += exit_t - info.entry_time_s - free_flow;
                    exited += 1;
                }
            }
            per_vehicle(sum, exited)
        };
        let node_delay = delay(&ordered, true);
        let full_delay = delay(&ordered, false);
        for (_, info) in &ordered {
            node_count += info.touched_node as u64;
            full_count += info.touched_full as u64;
        }

        let avg_queue = if self.queue_samples == 0 {
            0.0
        } else {
            self.queue_sum / self.queue_samples as f64
        };

        let assemble = |scope, count: u64, sums: ScopeSums, avg_delay: f64| NodeEvaluationResult {
            scope,
            vehicle_count: count,
            total_fuel_gal: sums.totals.fuel_gal,
            fuel_per_vehicle_gal: per_vehicle(sums.totals.fuel_gal, count),
            co_g: sums.totals.co_g,
            co_per_vehicle_g: per_vehicle(sums.totals.co_g, count),
            nox_g: sums.totals.nox_g,
            nox_per_vehicle_g: per_vehicle(sums.totals.nox_g, count),
            voc_g: sums.totals.voc_g,
            voc_per_vehicle_g: per_vehicle(sums.totals.voc_g, count),
            avg_queue_m: avg_queue,
            max_queue_m: self.queue_max,
            avg_delay_s: avg_delay,
            avg_stopped_delay_s: per_vehicle(sums.stopped_time_s, count),
            total_stops: sums.stops,
        };
        ScopedResults {
            node: assemble(Scope::Node, node_count, self.node, node_delay),
            full_network: assemble(Scope::FullNetwork, full_count, self.full, full_delay),
        }
    }
}

/// Queue length at one approach: the per-lane measurement, maximized over
/// lanes. `link_buf` is the link's `(lane, offset, length, queued)` entries
/// sorted by lane then descending offset.
fn approach_queue_m(link_buf: &[(u32, f64, f64, bool)], a: &Approach, qc: &QueueConfig) -> f64 {
    let mut best = 0.0f64;
    for lane in link_buf.chunk_by(|x, y| x.0 == y.0) {
        let lane_desc: Vec<(f64, f64, bool)> = lane
            .iter()
            .filter(|&&(_, offset, _, _)| offset <= a.stop_m)
            .map(|&(_, offset, length, queued)| (offset, length, queued))
            .collect();
        best = best.max(lane_queue_m(&lane_desc, a.stop_m, a.capture_m, qc));
    }
    best
}

/// Evaluation results for both scopes out of a single pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScopedResults {
    pub node: NodeEvaluationResult,
    pub full_network: NodeEvaluationResult,
}

/// Streaming evaluator: attach as a [`StepObserver`] to a run, then call
/// [`finish`](MetricsAccumulator::finish). Produces exactly the numbers a
/// replay of the full trajectory log would.
pub struct MetricsAccumulator<'n> {
    core: AccumCore<'n>,
    scratch: Vec<Sample>,
}

impl<'n> MetricsAccumulator<'n> {
    pub fn new(net: &'n CompiledNet, dt: f64, model: FuelEmissionModel, qc: QueueConfig) -> Self {
        MetricsAccumulator { core: AccumCore::new(net, dt, model, qc), scratch: Vec::new() }
    }

    pub fn finish(self) -> ScopedResults {
        self.core.finish()
    }
}

impl StepObserver for MetricsAccumulator<'_> {
    fn on_enter(&mut self, t: f64, veh: &VehicleState) {
        self.core.enter(t, veh.id, veh.route, veh.desired_factor);
    }

    fn on_exit(&mut self, t: f64, veh: &VehicleState) {
        self.core.exit(t, veh.id);
    }

    fn on_step(&mut self, _t: f64, vehicles: &[VehicleState]) {
        self.scratch.clear();
        self.scratch.extend(vehicles.iter().map(|v| Sample {
            veh: v.id,
            link: v.pos.link,
            lane: v.pos.lane,
            offset_m: v.pos.offset_m,
            speed_mps: v.v,
            accel_mps2: v.a,
            length_m: v.length_m,
        }));
        self.core.step(&self.scratch);
    }
}

/// Feed a recorded log through an aggregation core in simulation order.
fn replay(log: &TrajectoryLog, core: &mut AccumCore<'_>) {
    for rec in log.vehicles.values() {
        core.enter(rec.entry_time_s, rec.id, rec.route, rec.desired_factor);
    }
    let mut samples = Vec::new();
    let mut fed = 0u64;
    for step in log.steps() {
        samples.clear();
        samples.extend(step.iter().map(|row| Sample {
            veh: row.veh,
            link: row.link,
            lane: row.lane,
            offset_m: row.offset_m,
            speed_mps: row.speed_mps,
            accel_mps2: row.accel_mps2,
            length_m: log.vehicles[&row.veh].length_m,
        }));
        core.step(&samples);
        fed += 1;
    }
    // Steps with no vehicle present leave no rows but still count toward
    // time averages; they carry no state, so feeding them last is equivalent.
    for _ in fed..log.steps_total {
        core.step(&[]);
    }
    for rec in log.vehicles.values() {
        if let Some(exit_t) = rec.exit_time_s {
            core.exit(exit_t, rec.id);
        }
    }
}

/// Replay a recorded log and evaluate it under one scope.
pub fn node_evaluation(
    log: &TrajectoryLog,
    net: &CompiledNet,
    scope: Scope,
    model: &FuelEmissionModel,
    qc: &QueueConfig,
) -> NodeEvaluationResult {
    let mut core = AccumCore::new(net, log.dt, *model, *qc);
    replay(log, &mut core);
    let results = core.finish();
    match scope {
        Scope::Node => results.node,
        Scope::FullNetwork => results.full_network,
    }
}

/// Per-approach, per-step queue lengths at one evaluation node, replayed
/// from a log. Indexed `[approach][step]`, approaches in the node's order.
pub fn queue_series(
    log: &TrajectoryLog,
    node: &EvalNodeData,
    qc: &QueueConfig,
) -> Vec<Vec<f64>> {
    let mut queued: HashMap<u32, bool> = HashMap::new();
    let mut series = vec![Vec::new(); node.approaches.len()];
    let mut buf: Vec<(u32, f64, f64, bool)> = Vec::new();
    for step in log.steps() {
        for row in step {
            let entry = queued.entry(row.veh).or_insert(false);
            if row.speed_mps < qc.enter_mps {
                *entry = true;
            } else if row.speed_mps > qc.exit_mps {
                *entry = false;
            }
        }
        for (ai, &(link, stop)) in node.approaches.iter().enumerate() {
            buf.clear();
            buf.extend(step.iter().filter(|row| row.link == link).map(|row| {
                (row.lane, row.offset_m, log.vehicles[&row.veh].length_m, queued[&row.veh])
            }));
            buf.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            let a = Approach { link, stop_m: stop, capture_m: node.capture_m };
            series[ai].push(approach_queue_m(&buf, &a, qc));
        }
    }
    for approach in &mut series {
        approach.resize(log.steps_total as usize, 0.0);
    }
    series
}
