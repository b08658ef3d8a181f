//! Road-network data model and the scenario file format.
//!
//! A scenario is one UTF-8 JSON document with top-level keys `meta`, `links`,
//! `connectors`, `signals`, `stop_signs`, `inputs`, `routes`, `eval_nodes`.
//! Lengths are meters, speeds m/s, durations seconds, rates vehicles/hour.
//! [`load_network`] parses and fully validates; [`CompiledNet`] is the
//! index-based runtime form.

mod compiled;

pub use compiled::{
    Advance, AdvanceError, CompiledNet, Entry, EvalNodeData, Position, StopLine, StopLineControl,
};

use crate::driver::{DriverConfig, SignalState};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    /// Document shape or value constraints broken.
    #[error("schema violation: {0}")]
    Schema(String),
    /// A reference points at a link/lane/route that does not exist.
    #[error("referential violation: {0}")]
    Referential(String),
    /// An object placed outside its link.
    #[error("geometric violation: {0}")]
    Geometric(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub meta: Meta,
    pub links: Vec<Link>,
    #[serde(default)]
    pub connectors: Vec<Connector>,
    #[serde(default)]
    pub signals: Vec<SignalController>,
    #[serde(default)]
    pub stop_signs: Vec<StopSign>,
    #[serde(default)]
    pub inputs: Vec<FlowInput>,
    pub routes: Vec<Route>,
    #[serde(default)]
    pub eval_nodes: Vec<EvalNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// True when signal programs are assumptions rather than field data.
    #[serde(default)]
    pub assumed_spat: bool,
    /// Behavior overrides; omitted fields keep their defaults.
    #[serde(default)]
    pub driver: DriverConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Urban,
    Freeway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: String,
    pub length_m: f64,
    pub lanes: u32,
    pub speed_limit_mps: f64,
    pub kind: LinkKind,
}

/// Joins the downstream end of `(from_link, from_lane)` to the upstream end
/// of `(to_link, to_lane)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connector {
    pub from_link: String,
    pub from_lane: u32,
    pub to_link: String,
    pub to_lane: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub state: SignalState,
    pub duration_s: f64,
}

/// One signal head: a stop line on one lane with a fixed-time program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalController {
    pub id: String,
    pub link: String,
    pub lane: u32,
    pub position_m: f64,
    /// Program start is shifted this many seconds into simulation time.
    #[serde(default)]
    pub offset_s: f64,
    pub phases: Vec<Phase>,
}

impl SignalController {
    pub fn cycle_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    /// Indication at simulation time `t`, periodic with the cycle.
    pub fn state_at(&self, t: f64) -> SignalState {
        let cycle = self.cycle_s();
        let mut local = (t - self.offset_s).rem_euclid(cycle);
        for phase in &self.phases {
            if local < phase.duration_s {
                return phase.state;
            }
            local -= phase.duration_s;
        }
        self.phases.last().expect("validated non-empty").state
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSign {
    pub id: String,
    pub link: String,
    pub lane: u32,
    pub position_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedDistribution {
    pub mean_mps: f64,
    pub half_width_mps: f64,
}

/// Demand source at the upstream end of a link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowInput {
    pub link: String,
    pub rate_veh_h: f64,
    pub desired_speed: SpeedDistribution,
}

/// A chain of links. Vehicles entering the route's first link pick among the
/// routes starting there by probability; the probabilities per entry link
/// must sum to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub id: String,
    pub links: Vec<String>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Approach {
    pub link: String,
    pub stop_position_m: f64,
}

/// Measurement region: for each approach, the stretch `capture_m` upstream
/// of the stop position (clamped at the link start).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalNode {
    pub id: String,
    pub capture_m: f64,
    pub approaches: Vec<Approach>,
}

/// Parse and validate one scenario document.
pub fn load_network(doc: &str) -> Result<Network, NetError> {
    let net: Network = serde_json::from_str(doc).map_err(|e| NetError::Schema(e.to_string()))?;
    net.validate()?;
    Ok(net)
}

/// Free-flow traversal time of a route: every signal green, no other
/// traffic, each link driven at min(desired speed, its limit).
pub fn theoretical_travel_time(
    route: &Route,
    desired_speed: f64,
    net: &Network,
) -> Result<f64, NetError> {
    let mut total = 0.0;
    for id in &route.links {
        let link = net
            .links
            .iter()
            .find(|l| &l.id == id)
            .ok_or_else(|| NetError::Referential(format!("route link '{id}' not found")))?;
        total += link.length_m / desired_speed.min(link.speed_limit_mps);
    }
    Ok(total)
}

impl Network {
    /// Check every structural invariant of the scenario.
    pub fn validate(&self) -> Result<(), NetError> {
        let schema = |m: String| Err(NetError::Schema(m));
        let referential = |m: String| Err(NetError::Referential(m));

        self.meta
            .driver
            .validate()
            .map_err(|e| NetError::Schema(format!("meta.driver: {e}")))?;

        if self.links.is_empty() {
            return schema("network has no links".into());
        }
        let mut by_id: HashMap<&str, &Link> = HashMap::new();
        for link in &self.links {
            if link.id.is_empty() {
                return schema("link with empty id".into());
            }
            if by_id.insert(&link.id, link).is_some() {
                return schema(format!("duplicate link id '{}'", link.id));
            }
            if !(link.length_m > 0.0) || !link.length_m.is_finite() {
                return schema(format!("link '{}': length must be positive", link.id));
            }
            if link.lanes < 1 {
                return schema(format!("link '{}': needs at least one lane", link.id));
            }
            if !(link.speed_limit_mps > 0.0) || !link.speed_limit_mps.is_finite() {
                return schema(format!("link '{}': speed limit must be positive", link.id));
            }
        }

        let lane_ok = |link: &str, lane: u32| -> Result<(), NetError> {
            let l = by_id
                .get(link)
                .ok_or_else(|| NetError::Referential(format!("link '{link}' not found")))?;
            if lane >= l.lanes {
                return Err(NetError::Referential(format!(
                    "lane {lane} out of range on link '{link}' ({} lanes)",
                    l.lanes
                )));
            }
            Ok(())
        };

        let mut into = HashSet::new();
        let mut triple = HashSet::new();
        for c in &self.connectors {
            lane_ok(&c.from_link, c.from_lane)?;
            lane_ok(&c.to_link, c.to_lane)?;
            if !triple.insert((&c.from_link, c.from_lane, &c.to_link)) {
                return referential(format!(
                    "two connectors from ('{}', lane {}) into link '{}': ambiguous lane mapping",
                    c.from_link, c.from_lane, c.to_link
                ));
            }
            // One feeder per lane entrance keeps merges explicit (modeled as
            // acceleration lanes), so insertion conflicts cannot arise.
            if !into.insert((&c.to_link, c.to_lane)) {
                return referential(format!(
                    "two connectors feed ('{}', lane {}): model merges as added lanes",
                    c.to_link, c.to_lane
                ));
            }
        }

        let mut control_ids = HashSet::new();
        for s in &self.signals {
            if !control_ids.insert(&s.id) {
                return schema(format!("duplicate signal id '{}'", s.id));
            }
            lane_ok(&s.link, s.lane)?;
            let len = by_id[s.link.as_str()].length_m;
            if !(0.0..=len).contains(&s.position_m) {
                return Err(NetError::Geometric(format!(
                    "signal '{}' at {} m outside link '{}' (length {len} m)",
                    s.id, s.position_m, s.link
                )));
            }
            if s.phases.is_empty() {
                return schema(format!("signal '{}' has no phases", s.id));
            }
            if s.phases.iter().any(|p| !(p.duration_s > 0.0)) {
                return schema(format!("signal '{}': phase durations must be positive", s.id));
            }
        }
        for s in &self.stop_signs {
            if !control_ids.insert(&s.id) {
                return schema(format!("duplicate control id '{}'", s.id));
            }
            lane_ok(&s.link, s.lane)?;
            let len = by_id[s.link.as_str()].length_m;
            if !(0.0..=len).contains(&s.position_m) {
                return Err(NetError::Geometric(format!(
                    "stop sign '{}' at {} m outside link '{}' (length {len} m)",
                    s.id, s.position_m, s.link
                )));
            }
        }

        let mut route_ids = HashSet::new();
        let mut entry_prob: HashMap<&str, f64> = HashMap::new();
        for r in &self.routes {
            if !route_ids.insert(&r.id) {
                return schema(format!("duplicate route id '{}'", r.id));
            }
            if r.links.is_empty() {
                return schema(format!("route '{}' has no links", r.id));
            }
            let mut seen = HashSet::new();
            for id in &r.links {
                if !by_id.contains_key(id.as_str()) {
                    return referential(format!("route '{}': link '{id}' not found", r.id));
                }
                if !seen.insert(id) {
                    return schema(format!("route '{}' revisits link '{id}'", r.id));
                }
            }
            for pair in r.links.windows(2) {
                let joined = self
                    .connectors
                    .iter()
                    .any(|c| c.from_link == pair[0] && c.to_link == pair[1]);
                if !joined {
                    return referential(format!(
                        "route '{}': no connector joins '{}' to '{}'",
                        r.id, pair[0], pair[1]
                    ));
                }
            }
            if !(r.probability > 0.0 && r.probability <= 1.0) {
                return schema(format!("route '{}': probability must be in (0, 1]", r.id));
            }
            *entry_prob.entry(r.links[0].as_str()).or_default() += r.probability;
        }
        for (entry, sum) in &entry_prob {
            if (sum - 1.0).abs() > 1e-9 {
                return schema(format!(
                    "routes entering at '{entry}' have probabilities summing to {sum}, expected 1"
                ));
            }
        }

        for (i, input) in self.inputs.iter().enumerate() {
            if !by_id.contains_key(input.link.as_str()) {
                return referential(format!("input {i}: link '{}' not found", input.link));
            }
            if !(input.rate_veh_h >= 0.0) || !input.rate_veh_h.is_finite() {
                return schema(format!("input {i}: rate must be non-negative"));
            }
            let d = &input.desired_speed;
            if !(d.mean_mps > 0.0) || !(d.half_width_mps >= 0.0) || d.half_width_mps >= d.mean_mps
            {
                return schema(format!(
                    "input {i}: desired speed needs mean > half_width >= 0"
                ));
            }
            if !entry_prob.contains_key(input.link.as_str()) {
                return referential(format!(
                    "input {i}: no route starts at link '{}'",
                    input.link
                ));
            }
        }

        let mut node_ids = HashSet::new();
        for node in &self.eval_nodes {
            if !node_ids.insert(&node.id) {
                return schema(format!("duplicate eval node id '{}'", node.id));
            }
            if node.approaches.is_empty() {
                return schema(format!("eval node '{}' has no approaches", node.id));
            }
            if !(node.capture_m > 0.0) {
                return schema(format!("eval node '{}': capture_m must be positive", node.id));
            }
            for a in &node.approaches {
                let link = by_id.get(a.link.as_str()).ok_or_else(|| {
                    NetError::Referential(format!(
                        "eval node '{}': link '{}' not found",
                        node.id, a.link
                    ))
                })?;
                if !(0.0..=link.length_m).contains(&a.stop_position_m) {
                    return Err(NetError::Geometric(format!(
                        "eval node '{}': stop position {} m outside link '{}'",
                        node.id, a.stop_position_m, a.link
                    )));
                }
                if node.capture_m > link.length_m {
                    return Err(NetError::Geometric(format!(
                        "eval node '{}': capture region longer than link '{}'",
                        node.id, a.link
                    )));
                }
            }
        }

        Ok(())
    }

    /// Validate, then build the index-based runtime form.
    pub fn compile(self) -> Result<CompiledNet, NetError> {
        self.validate()?;
        Ok(CompiledNet::build(self))
    }
}

/// Hand-built networks shared by unit tests across the crate.
#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub(crate) fn minimal_doc() -> String {
        r#"{
            "meta": {"name": "minimal"},
            "links": [
                {"id": "A", "length_m": 1000.0, "lanes": 1, "speed_limit_mps": 13.9, "kind": "urban"}
            ],
            "routes": [{"id": "r", "links": ["A"], "probability": 1.0}]
        }"#
        .to_string()
    }

    /// One link `A`, one route over it, no controls and no inputs.
    pub(crate) fn single_link(length_m: f64, lanes: u32, speed_limit_mps: f64) -> Network {
        Network {
            meta: Meta {
                name: "single-link".into(),
                description: None,
                assumed_spat: true,
                driver: DriverConfig::default(),
            },
            links: vec![Link {
                id: "A".into(),
                length_m,
                lanes,
                speed_limit_mps,
                kind: LinkKind::Urban,
            }],
            connectors: vec![],
            signals: vec![],
            stop_signs: vec![],
            inputs: vec![],
            routes: vec![Route { id: "r".into(), links: vec!["A".into()], probability: 1.0 }],
            eval_nodes: vec![],
        }
    }

    pub(crate) fn two_link_network() -> Network {
        Network {
            meta: Meta {
                name: "two-link".into(),
                description: None,
                assumed_spat: true,
                driver: DriverConfig::default(),
            },
            links: vec![
                Link {
                    id: "A".into(),
                    length_m: 1000.0,
                    lanes: 2,
                    speed_limit_mps: 20.0,
                    kind: LinkKind::Urban,
                },
                Link {
                    id: "B".into(),
                    length_m: 1000.0,
                    lanes: 2,
                    speed_limit_mps: 10.0,
                    kind: LinkKind::Urban,
                },
            ],
            connectors: vec![
                Connector { from_link: "A".into(), from_lane: 0, to_link: "B".into(), to_lane: 0 },
                Connector { from_link: "A".into(), from_lane: 1, to_link: "B".into(), to_lane: 1 },
            ],
            signals: vec![SignalController {
                id: "S1".into(),
                link: "A".into(),
                lane: 0,
                position_m: 990.0,
                offset_s: 0.0,
                phases: vec![
                    Phase { state: SignalState::Green, duration_s: 45.0 },
                    Phase { state: SignalState::Amber, duration_s: 3.0 },
                    Phase { state: SignalState::Red, duration_s: 42.0 },
                ],
            }],
            stop_signs: vec![],
            inputs: vec![FlowInput {
                link: "A".into(),
                rate_veh_h: 600.0,
                desired_speed: SpeedDistribution { mean_mps: 19.0, half_width_mps: 1.9 },
            }],
            routes: vec![Route { id: "r".into(), links: vec!["A".into(), "B".into()], probability: 1.0 }],
            eval_nodes: vec![EvalNode {
                id: "n".into(),
                capture_m: 250.0,
                approaches: vec![Approach { link: "A".into(), stop_position_m: 990.0 }],
            }],
        }
    }
}
