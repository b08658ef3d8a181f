//! Index-based runtime form of a validated [`Network`].
//!
//! String ids are resolved once; the hot loops work on dense `u32` indices
//! and per-lane tables. All iteration orders are fixed by construction so
//! results never depend on hash-map ordering.

use super::{LinkKind, Network};
use crate::driver::{DriverConfig, SignalState};
use std::collections::HashMap;

/// 1-D position: arc length from the upstream end of a lane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub link: u32,
    pub lane: u32,
    pub offset_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Advance {
    At(Position),
    Exited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AdvanceError {
    #[error("position is not on the route")]
    NotOnRoute,
    #[error("no connector continues lane {lane} of link {link} along the route")]
    NoConnector { link: u32, lane: u32 },
}

/// Stop line on a lane, with what controls it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopLine {
    pub position_m: f64,
    pub control: StopLineControl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopLineControl {
    /// Index into the network's signal list.
    Signal(u32),
    /// Index into the network's stop-sign list.
    StopSign(u32),
}

#[derive(Clone, Debug)]
struct LaneData {
    /// (next link, lane there) for each connector leaving this lane.
    to: Vec<(u32, u32)>,
    /// Sorted by position.
    stop_lines: Vec<StopLine>,
}

#[derive(Clone, Debug)]
struct LinkData {
    length: f64,
    limit: f64,
    kind: LinkKind,
    lanes: Vec<LaneData>,
}

#[derive(Clone, Debug)]
struct SignalData {
    offset: f64,
    cycle: f64,
    /// Cumulative phase end times and the state of each phase.
    ends: Vec<f64>,
    states: Vec<SignalState>,
}

impl SignalData {
    fn state_at(&self, t: f64) -> SignalState {
        let local = (t - self.offset).rem_euclid(self.cycle);
        let i = self.ends.partition_point(|&e| e <= local);
        self.states[i.min(self.states.len() - 1)]
    }
}

#[derive(Clone, Debug)]
struct RouteData {
    links: Vec<u32>,
}

/// One demand source, with the cumulative route-choice table for its entry
/// link.
#[derive(Clone, Debug)]
pub struct Entry {
    pub link: u32,
    pub rate_veh_h: f64,
    pub desired_mean_mps: f64,
    pub desired_half_width_mps: f64,
    /// (cumulative probability, route index), ascending.
    route_cdf: Vec<(f64, u32)>,
}

#[derive(Clone, Debug)]
pub struct EvalNodeData {
    pub id: String,
    /// (link, stop position).
    pub approaches: Vec<(u32, f64)>,
    pub capture_m: f64,
}

#[derive(Clone, Debug)]
pub struct CompiledNet {
    source: Network,
    links: Vec<LinkData>,
    link_ids: Vec<String>,
    link_index: HashMap<String, u32>,
    signals: Vec<SignalData>,
    routes: Vec<RouteData>,
    entries: Vec<Entry>,
    nodes: Vec<EvalNodeData>,
    /// Unique (link, stop position) pairs that carry any control, sorted.
    controlled_approaches: Vec<(u32, f64)>,
    /// Per (link, lane): the single (link, lane) feeding it, if any.
    feeders: Vec<Vec<Option<(u32, u32)>>>,
}

impl CompiledNet {
    /// `net` must already be validated (see [`Network::compile`]).
    pub(super) fn build(net: Network) -> CompiledNet {
        let link_index: HashMap<String, u32> = net
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i as u32))
            .collect();
        let idx = |id: &str| link_index[id];

        let mut links: Vec<LinkData> = net
            .links
            .iter()
            .map(|l| LinkData {
                length: l.length_m,
                limit: l.speed_limit_mps,
                kind: l.kind,
                lanes: vec![LaneData { to: Vec::new(), stop_lines: Vec::new() }; l.lanes as usize],
            })
            .collect();

        let mut feeders: Vec<Vec<Option<(u32, u32)>>> = net
            .links
            .iter()
            .map(|l| vec![None; l.lanes as usize])
            .collect();
        for c in &net.connectors {
            links[idx(&c.from_link) as usize].lanes[c.from_lane as usize]
                .to
                .push((idx(&c.to_link), c.to_lane));
            // Unique by validation: at most one connector feeds a lane.
            feeders[idx(&c.to_link) as usize][c.to_lane as usize] =
                Some((idx(&c.from_link), c.from_lane));
        }

        for (i, s) in net.signals.iter().enumerate() {
            links[idx(&s.link) as usize].lanes[s.lane as usize].stop_lines.push(StopLine {
                position_m: s.position_m,
                control: StopLineControl::Signal(i as u32),
            });
        }
        for (i, s) in net.stop_signs.iter().enumerate() {
            links[idx(&s.link) as usize].lanes[s.lane as usize].stop_lines.push(StopLine {
                position_m: s.position_m,
                control: StopLineControl::StopSign(i as u32),
            });
        }
        for link in &mut links {
            for lane in &mut link.lanes {
                lane.stop_lines
                    .sort_by(|a, b| a.position_m.partial_cmp(&b.position_m).unwrap());
                lane.to.sort_unstable();
            }
        }

        let signals = net
            .signals
            .iter()
            .map(|s| {
                let mut ends = Vec::with_capacity(s.phases.len());
                let mut states = Vec::with_capacity(s.phases.len());
                let mut acc = 0.0;
                for p in &s.phases {
                    acc += p.duration_s;
                    ends.push(acc);
                    states.push(p.state);
                }
                SignalData { offset: s.offset_s, cycle: acc, ends, states }
            })
            .collect();

        let routes: Vec<RouteData> = net
            .routes
            .iter()
            .map(|r| RouteData { links: r.links.iter().map(|id| idx(id)).collect() })
            .collect();

        let entries = net
            .inputs
            .iter()
            .map(|input| {
                let entry_link = idx(&input.link);
                let mut cdf = Vec::new();
                let mut acc = 0.0;
                for (ri, r) in net.routes.iter().enumerate() {
                    if r.links[0] == input.link {
                        acc += r.probability;
                        cdf.push((acc, ri as u32));
                    }
                }
                Entry {
                    link: entry_link,
                    rate_veh_h: input.rate_veh_h,
                    desired_mean_mps: input.desired_speed.mean_mps,
                    desired_half_width_mps: input.desired_speed.half_width_mps,
                    route_cdf: cdf,
                }
            })
            .collect();

        let nodes = net
            .eval_nodes
            .iter()
            .map(|n| EvalNodeData {
                id: n.id.clone(),
                approaches: n
                    .approaches
                    .iter()
                    .map(|a| (idx(&a.link), a.stop_position_m))
                    .collect(),
                capture_m: n.capture_m,
            })
            .collect();

        let mut controlled_approaches: Vec<(u32, f64)> = net
            .signals
            .iter()
            .map(|s| (idx(&s.link), s.position_m))
            .chain(net.stop_signs.iter().map(|s| (idx(&s.link), s.position_m)))
            .collect();
        controlled_approaches
            .sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        controlled_approaches.dedup();

        let link_ids = net.links.iter().map(|l| l.id.clone()).collect();
        CompiledNet {
            source: net,
            links,
            link_ids,
            link_index,
            signals,
            routes,
            entries,
            nodes,
            controlled_approaches,
            feeders,
        }
    }

    pub fn source(&self) -> &Network {
        &self.source
    }

    pub fn name(&self) -> &str {
        &self.source.meta.name
    }

    pub fn driver_config(&self) -> &DriverConfig {
        &self.source.meta.driver
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link_id(&self, link: u32) -> &str {
        &self.link_ids[link as usize]
    }

    pub fn link_index(&self, id: &str) -> Option<u32> {
        self.link_index.get(id).copied()
    }

    pub fn link_length(&self, link: u32) -> f64 {
        self.links[link as usize].length
    }

    pub fn speed_limit(&self, link: u32) -> f64 {
        self.links[link as usize].limit
    }

    pub fn link_kind(&self, link: u32) -> LinkKind {
        self.links[link as usize].kind
    }

    pub fn lane_count(&self, link: u32) -> u32 {
        self.links[link as usize].lanes.len() as u32
    }

    pub fn stop_lines(&self, link: u32, lane: u32) -> &[StopLine] {
        &self.links[link as usize].lanes[lane as usize].stop_lines
    }

    pub fn signal_state(&self, signal: u32, t: f64) -> SignalState {
        self.signals[signal as usize].state_at(t)
    }

    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    /// The single (link, lane) whose connector feeds `(link, lane)`, if any.
    pub fn feeder(&self, link: u32, lane: u32) -> Option<(u32, u32)> {
        self.feeders[link as usize][lane as usize]
    }

    /// Lane reached on `next` when leaving `(link, lane)`, if a connector
    /// exists.
    pub fn connector_to(&self, link: u32, lane: u32, next: u32) -> Option<u32> {
        self.links[link as usize].lanes[lane as usize]
            .to
            .iter()
            .find(|&&(l, _)| l == next)
            .map(|&(_, target)| target)
    }

    /// Every (link, lane) a vehicle leaving `(link, lane)` could land on,
    /// regardless of route. Traffic queued on any of them can physically
    /// block the end of this lane.
    pub fn continuations(&self, link: u32, lane: u32) -> &[(u32, u32)] {
        &self.links[link as usize].lanes[lane as usize].to
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    pub fn route_links(&self, route: u32) -> &[u32] {
        &self.routes[route as usize].links
    }

    /// Pick a route for an entry from a uniform draw in [0, 1).
    pub fn sample_route(&self, entry: usize, u: f64) -> u32 {
        let cdf = &self.entries[entry].route_cdf;
        for &(cum, route) in cdf {
            if u < cum {
                return route;
            }
        }
        cdf.last().expect("validated: every input has routes").1
    }

    /// Arc-length advance along the route chain. Crosses into the next link
    /// only when the new offset would pass the current link's end, so a zero
    /// distance is always the identity.
    pub fn advance_position(
        &self,
        pos: Position,
        distance: f64,
        route: u32,
    ) -> Result<Advance, AdvanceError> {
        let chain = &self.routes[route as usize].links;
        let mut i = chain
            .iter()
            .position(|&l| l == pos.link)
            .ok_or(AdvanceError::NotOnRoute)?;
        let mut lane = pos.lane;
        let mut offset = pos.offset_m + distance;
        loop {
            let link = chain[i];
            let len = self.links[link as usize].length;
            if offset <= len {
                return Ok(Advance::At(Position { link, lane, offset_m: offset }));
            }
            if i + 1 == chain.len() {
                return Ok(Advance::Exited);
            }
            lane = self
                .connector_to(link, lane, chain[i + 1])
                .ok_or(AdvanceError::NoConnector { link, lane })?;
            offset -= len;
            i += 1;
        }
    }

    /// Free-flow traversal time at a scalar desired speed (see
    /// [`super::theoretical_travel_time`]).
    pub fn route_travel_time(&self, route: u32, desired_speed: f64) -> f64 {
        self.routes[route as usize]
            .links
            .iter()
            .map(|&l| {
                let link = &self.links[l as usize];
                link.length / desired_speed.min(link.limit)
            })
            .sum()
    }

    /// Free-flow traversal time of a driver whose desired speed is
    /// `factor` x the limit of whichever link it is on.
    pub fn factor_travel_time(&self, route: u32, factor: f64) -> f64 {
        self.routes[route as usize]
            .links
            .iter()
            .map(|&l| {
                let link = &self.links[l as usize];
                link.length / (factor * link.limit)
            })
            .sum()
    }

    pub fn eval_nodes(&self) -> &[EvalNodeData] {
        &self.nodes
    }

    /// Every distinct controlled stop line as a (link, position) approach.
    pub fn controlled_approaches(&self) -> &[(u32, f64)] {
        &self.controlled_approaches
    }

    pub fn total_length_m(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }
}
