//! OpenStreetMap corridor ingest.
//!
//! Reads a raw `.osm` XML extract, follows an ordered list of way ids along
//! one corridor, and emits a scenario [`Network`]: one link per way segment
//! between junctions, signal stop lines at `highway=traffic_signals` nodes,
//! stop signs at `highway=stop` nodes, lane counts and speed limits from way
//! tags with per-class fallbacks, and great-circle (haversine) lengths.
//!
//! Ingest produces a *starting point*, not a finished scenario: demand,
//! measured signal timings, turn splits, and evaluation nodes are author
//! input. Emitted signals carry a default fixed-time program and the
//! scenario is marked `assumed_spat` so downstream tooling can tell. Stop
//! lines are emitted on lane 0; authors replicate them across lanes where
//! the approach is wider.

use crate::net::{
    Connector, Link, LinkKind, Meta, NetError, Network, Phase, Route, SignalController, StopSign,
};
use quick_xml::events::attributes::Attributes;
use quick_xml::events::Event;
use quick_xml::Reader;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

/// Mean Earth radius for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    /// The XML stream is not well formed or an attribute cannot be read.
    #[error("malformed OSM XML: {0}")]
    Xml(String),
    /// A way lists a node id the extract does not contain.
    #[error("way {way} references unknown node {node}")]
    DanglingRef { way: i64, node: i64 },
    /// The requested corridor cannot be assembled from the extract.
    #[error("corridor: {0}")]
    Corridor(String),
    /// Two consecutive corridor nodes share the same coordinates.
    #[error("zero-length segment at node {0}")]
    ZeroLength(i64),
    /// The assembled scenario violates the network schema (bad tag data).
    #[error("emitted network failed validation: {0}")]
    Invalid(#[from] NetError),
}

// ---------------------------------------------------------------- raw data --

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OsmNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: HashMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OsmWay {
    pub id: i64,
    /// Ordered node references; all resolve against [`RawGraph::nodes`].
    pub nodes: Vec<i64>,
    pub tags: HashMap<String, String>,
}

/// Nodes and ways of one extract, tags preserved; relations are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawGraph {
    pub nodes: BTreeMap<i64, OsmNode>,
    pub ways: Vec<OsmWay>,
}

impl RawGraph {
    pub fn way(&self, id: i64) -> Option<&OsmWay> {
        self.ways.iter().find(|w| w.id == id)
    }
}

// ---------------------------------------------------------------- defaults --

/// Lane count and speed limit assumed for ways that do not tag them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassDefaults {
    pub lanes: u32,
    pub speed_mps: f64,
}

/// Per-highway-class fallbacks plus the unit conversions `maxspeed` values
/// need ("35 mph" versus the bare-number km/h convention).
#[derive(Clone, Debug, PartialEq)]
pub struct IngestDefaults {
    pub classes: BTreeMap<String, ClassDefaults>,
    /// Used when the highway class itself is unknown.
    pub fallback: ClassDefaults,
    pub mph_to_mps: f64,
    pub kmh_to_mps: f64,
    /// Fixed-time program attached to every emitted signal.
    pub signal_phases: Vec<Phase>,
}

impl Default for IngestDefaults {
    fn default() -> Self {
        use crate::driver::SignalState::{Amber, Green, Red};
        let mph = 0.44704;
        let classes = [
            ("motorway", 2, 65.0 * mph),
            ("motorway_link", 1, 50.0 * mph),
            ("trunk", 2, 55.0 * mph),
            ("primary", 2, 45.0 * mph),
            ("secondary", 1, 40.0 * mph),
            ("tertiary", 1, 35.0 * mph),
            ("residential", 1, 13.9),
            ("unclassified", 1, 13.9),
        ]
        .into_iter()
        .map(|(name, lanes, speed_mps)| (name.to_string(), ClassDefaults { lanes, speed_mps }))
        .collect();
        IngestDefaults {
            classes,
            fallback: ClassDefaults { lanes: 1, speed_mps: 13.9 },
            mph_to_mps: mph,
            kmh_to_mps: 1.0 / 3.6,
            signal_phases: vec![
                Phase { state: Green, duration_s: 45.0 },
                Phase { state: Amber, duration_s: 3.0 },
                Phase { state: Red, duration_s: 42.0 },
            ],
        }
    }
}

impl IngestDefaults {
    pub fn class(&self, highway: &str) -> ClassDefaults {
        self.classes.get(highway).copied().unwrap_or(self.fallback)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, c) in self.classes.iter().map(|(n, c)| (n.as_str(), c)) {
            if c.lanes < 1 || !(c.speed_mps > 0.0) {
                return Err(format!("class '{name}': lanes and speed must be positive"));
            }
        }
        if self.fallback.lanes < 1 || !(self.fallback.speed_mps > 0.0) {
            return Err("fallback: lanes and speed must be positive".into());
        }
        if !(self.mph_to_mps > 0.0) || !(self.kmh_to_mps > 0.0) {
            return Err("unit conversions must be positive".into());
        }
        if self.signal_phases.is_empty()
            || self.signal_phases.iter().any(|p| !(p.duration_s > 0.0))
        {
            return Err("signal program needs phases with positive durations".into());
        }
        Ok(())
    }
}

// ------------------------------------------------------------- XML parsing --

/// Parse an `.osm` XML extract into nodes and ways.
///
/// Both self-closing (`<node .../>`) and nested (`<node>...</node>`) element
/// forms are accepted; `relation` and any other elements are skipped.
pub fn parse_osm<R: BufRead>(input: R) -> Result<RawGraph, IngestError> {
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut graph = RawGraph::default();
    let mut open_node: Option<OsmNode> = None;
    let mut open_way: Option<OsmWay> = None;

    loop {
        let position = reader.buffer_position();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| IngestError::Xml(format!("{e} near byte {position}")))?;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) => {
                let self_closing = matches!(event, Event::Empty(_));
                match e.name().as_ref() {
                    b"node" => {
                        let node = node_from_attrs(e.attributes())?;
                        if self_closing {
                            graph.nodes.insert(node.id, node);
                        } else {
                            open_node = Some(node);
                        }
                    }
                    b"way" => {
                        let way = way_from_attrs(e.attributes())?;
                        if self_closing {
                            graph.ways.push(way);
                        } else {
                            open_way = Some(way);
                        }
                    }
                    b"tag" => {
                        if let Some((k, v)) = key_value(e.attributes())? {
                            if let Some(node) = open_node.as_mut() {
                                node.tags.insert(k, v);
                            } else if let Some(way) = open_way.as_mut() {
                                way.tags.insert(k, v);
                            }
                        }
                    }
                    b"nd" => {
                        if let Some(way) = open_way.as_mut() {
                            way.nodes.push(node_ref(e.attributes())?);
                        }
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => match e.name().as_ref() {
                b"node" => {
                    if let Some(node) = open_node.take() {
                        graph.nodes.insert(node.id, node);
                    }
                }
                b"way" => {
                    if let Some(way) = open_way.take() {
                        graph.ways.push(way);
                    }
                }
                _ => {}
            },
            _ => {}
        }
        buf.clear();
    }

    for way in &graph.ways {
        for &node in &way.nodes {
            if !graph.nodes.contains_key(&node) {
                return Err(IngestError::DanglingRef { way: way.id, node });
            }
        }
    }
    Ok(graph)
}

fn attr_map(attrs: Attributes) -> Result<HashMap<String, String>, IngestError> {
    let mut map = HashMap::new();
    for attr in attrs {
        let attr = attr.map_err(|e| IngestError::Xml(e.to_string()))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|e| IngestError::Xml(e.to_string()))?
            .into_owned();
        map.insert(key, value);
    }
    Ok(map)
}

fn required<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
    element: &str,
) -> Result<T, IngestError> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| IngestError::Xml(format!("<{element}> missing or non-numeric '{key}'")))
}

fn node_from_attrs(attrs: Attributes) -> Result<OsmNode, IngestError> {
    let map = attr_map(attrs)?;
    Ok(OsmNode {
        id: required(&map, "id", "node")?,
        lat: required(&map, "lat", "node")?,
        lon: required(&map, "lon", "node")?,
        tags: HashMap::new(),
    })
}

fn way_from_attrs(attrs: Attributes) -> Result<OsmWay, IngestError> {
    let map = attr_map(attrs)?;
    Ok(OsmWay { id: required(&map, "id", "way")?, nodes: Vec::new(), tags: HashMap::new() })
}

fn key_value(attrs: Attributes) -> Result<Option<(String, String)>, IngestError> {
    let mut map = attr_map(attrs)?;
    Ok(match (map.remove("k"), map.remove("v")) {
        (Some(k), Some(v)) => Some((k, v)),
        _ => None,
    })
}

fn node_ref(attrs: Attributes) -> Result<i64, IngestError> {
    required(&attr_map(attrs)?, "ref", "nd")
}

// -------------------------------------------------------------- speed tags --

/// Interpret a `maxspeed` tag value. Total: anything unparseable falls back
/// to the class default and reports a warning instead of failing.
///
/// `"35 mph"` converts at 0.44704; a bare number is km/h; common metric
/// suffixes are accepted.
pub fn parse_speed_limit(
    value: &str,
    highway: &str,
    defaults: &IngestDefaults,
) -> (f64, Option<String>) {
    let fallback = defaults.class(highway).speed_mps;
    let text = value.trim();
    if text.is_empty() {
        return (fallback, None);
    }
    let lower = text.to_ascii_lowercase();
    let number = |s: &str| s.trim().parse::<f64>().ok().filter(|n| *n > 0.0 && n.is_finite());
    let parsed = if let Some(rest) = lower.strip_suffix("mph") {
        number(rest).map(|n| n * defaults.mph_to_mps)
    } else {
        let rest = ["km/h", "kmh", "kph"]
            .iter()
            .find_map(|suffix| lower.strip_suffix(suffix))
            .unwrap_or(&lower);
        number(rest).map(|n| n * defaults.kmh_to_mps)
    };
    match parsed {
        Some(mps) => (mps, None),
        None => (
            fallback,
            Some(format!("unparseable maxspeed '{text}': using default {fallback} m/s")),
        ),
    }
}

// ------------------------------------------------------------ geodesy ------

/// Great-circle distance between two WGS84 points on the mean sphere.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2)
        + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

// ------------------------------------------------------- network assembly --

/// What [`build_network`] did and what it had to assume.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub nodes: usize,
    pub ways: usize,
    pub links: usize,
    pub signals: usize,
    pub stop_signs: usize,
    /// Great-circle length of the whole corridor path.
    pub path_length_m: f64,
    pub warnings: Vec<String>,
}

/// One corridor way oriented along the path direction.
struct OrientedWay<'g> {
    way: &'g OsmWay,
    nodes: Vec<i64>,
}

/// Chain the corridor ways end to end, reversing node order where needed.
fn orient_corridor<'g>(
    graph: &'g RawGraph,
    corridor: &[i64],
) -> Result<Vec<OrientedWay<'g>>, IngestError> {
    let bad = |msg: String| Err(IngestError::Corridor(msg));
    if corridor.is_empty() {
        return bad("empty corridor".into());
    }
    let mut ways = Vec::with_capacity(corridor.len());
    for &id in corridor {
        let way = graph
            .way(id)
            .ok_or_else(|| IngestError::Corridor(format!("way {id} not in extract")))?;
        if way.nodes.len() < 2 {
            return bad(format!("way {id} has fewer than two nodes"));
        }
        ways.push(way);
    }

    let mut oriented = Vec::with_capacity(ways.len());
    let mut first = ways[0].nodes.clone();
    if let Some(second) = ways.get(1) {
        let touches = |n: i64| {
            second.nodes.first() == Some(&n) || second.nodes.last() == Some(&n)
        };
        if !touches(*first.last().expect("len >= 2")) {
            if touches(first[0]) {
                first.reverse();
            } else {
                return bad(format!(
                    "ways {} and {} share no end node",
                    corridor[0], corridor[1]
                ));
            }
        }
    }
    let mut join = *first.last().expect("len >= 2");
    oriented.push(OrientedWay { way: ways[0], nodes: first });

    for (i, way) in ways.iter().enumerate().skip(1) {
        let mut nodes = way.nodes.clone();
        if *nodes.last().expect("len >= 2") == join && nodes[0] != join {
            nodes.reverse();
        }
        if nodes[0] != join {
            return bad(format!(
                "ways {} and {} share no end node",
                corridor[i - 1], corridor[i]
            ));
        }
        join = *nodes.last().expect("len >= 2");
        oriented.push(OrientedWay { way, nodes });
    }
    Ok(oriented)
}

fn link_kind(highway: &str) -> LinkKind {
    match highway {
        "motorway" | "motorway_link" => LinkKind::Freeway,
        _ => LinkKind::Urban,
    }
}

/// Assemble a scenario network for one corridor.
///
/// Links break at way boundaries and at junction nodes (nodes used by more
/// than two ways, i.e. real branch points); each link therefore inherits the
/// tags of exactly one way. Consecutive links are joined lane-for-lane up to
/// the narrower lane count, and a single route spans the whole corridor.
pub fn build_network(
    graph: &RawGraph,
    defaults: &IngestDefaults,
    corridor: &[i64],
    name: &str,
) -> Result<(Network, IngestReport), IngestError> {
    defaults.validate().map_err(NetError::Schema)?;
    let oriented = orient_corridor(graph, corridor)?;
    let mut report = IngestReport {
        nodes: graph.nodes.len(),
        ways: graph.ways.len(),
        ..IngestReport::default()
    };

    // How many ways touch each node, over the whole extract: >2 is a branch.
    let mut usage: HashMap<i64, u32> = HashMap::new();
    for way in &graph.ways {
        let mut seen = HashSet::new();
        for &n in &way.nodes {
            if seen.insert(n) {
                *usage.entry(n).or_insert(0) += 1;
            }
        }
    }

    // Cut the corridor into per-link node runs.
    let mut runs: Vec<(&OsmWay, Vec<i64>)> = Vec::new();
    for part in &oriented {
        let mut run = vec![part.nodes[0]];
        for (i, &n) in part.nodes.iter().enumerate().skip(1) {
            run.push(n);
            let interior = i + 1 < part.nodes.len();
            if interior && usage.get(&n).copied().unwrap_or(0) > 2 {
                runs.push((part.way, std::mem::replace(&mut run, vec![n])));
            }
        }
        runs.push((part.way, run));
    }

    let mut links = Vec::with_capacity(runs.len());
    // (arc position of link start, link index) for stop-line placement.
    let mut starts = Vec::with_capacity(runs.len());
    let mut arc = 0.0;
    for (i, (way, run)) in runs.iter().enumerate() {
        let highway = way.tags.get("highway").map(String::as_str).unwrap_or("");
        let class = defaults.class(highway);
        let lanes = match way.tags.get("lanes") {
            None => class.lanes,
            Some(text) => match text.trim().parse::<u32>() {
                Ok(n) if n >= 1 => n,
                _ => {
                    report.warnings.push(format!(
                        "way {}: unparseable lanes '{}': using default {}",
                        way.id, text, class.lanes
                    ));
                    class.lanes
                }
            },
        };
        let maxspeed = way.tags.get("maxspeed").map(String::as_str).unwrap_or("");
        let (speed_limit_mps, warning) = parse_speed_limit(maxspeed, highway, defaults);
        if let Some(w) = warning {
            report.warnings.push(format!("way {}: {w}", way.id));
        }

        let mut length_m = 0.0;
        for pair in run.windows(2) {
            let a = &graph.nodes[&pair[0]];
            let b = &graph.nodes[&pair[1]];
            let d = haversine_m(a.lat, a.lon, b.lat, b.lon);
            if !(d > 0.0) {
                return Err(IngestError::ZeroLength(pair[1]));
            }
            length_m += d;
        }
        starts.push(arc);
        arc += length_m;
        links.push(Link {
            id: format!("L{:02}", i + 1),
            length_m,
            lanes,
            speed_limit_mps,
            kind: link_kind(highway),
        });
    }
    report.path_length_m = arc;
    report.links = links.len();

    let mut connectors = Vec::new();
    for (i, pair) in links.windows(2).enumerate() {
        for lane in 0..pair[0].lanes.min(pair[1].lanes) {
            connectors.push(Connector {
                from_link: links[i].id.clone(),
                from_lane: lane,
                to_link: links[i + 1].id.clone(),
                to_lane: lane,
            });
        }
    }

    // Stop lines: walk the path once, keeping the arc position; a node on a
    // link boundary belongs to the end of the upstream link.
    let mut signals = Vec::new();
    let mut stop_signs = Vec::new();
    let mut emitted = HashSet::new();
    let mut arc = 0.0;
    let mut prev: Option<&OsmNode> = None;
    for (link_idx, (_, run)) in runs.iter().enumerate() {
        for &id in run.iter().skip(if link_idx == 0 { 0 } else { 1 }) {
            let node = &graph.nodes[&id];
            if let Some(p) = prev {
                arc += haversine_m(p.lat, p.lon, node.lat, node.lon);
            }
            prev = Some(node);
            let control = node.tags.get("highway").map(String::as_str);
            if !matches!(control, Some("traffic_signals") | Some("stop")) {
                continue;
            }
            if !emitted.insert(id) {
                continue;
            }
            // Boundary nodes are walked as the last node of the upstream
            // run, so `link_idx` owns them: the stop line closes that link.
            let link = &links[link_idx];
            let position_m = (arc - starts[link_idx]).min(link.length_m);
            if control == Some("traffic_signals") {
                signals.push(SignalController {
                    id: format!("S{}", signals.len() + 1),
                    link: link.id.clone(),
                    lane: 0,
                    position_m,
                    offset_s: 0.0,
                    phases: defaults.signal_phases.clone(),
                });
            } else {
                stop_signs.push(StopSign {
                    id: format!("ST{}", stop_signs.len() + 1),
                    link: link.id.clone(),
                    lane: 0,
                    position_m,
                });
            }
        }
    }
    report.signals = signals.len();
    report.stop_signs = stop_signs.len();

    let route = Route {
        id: "corridor".into(),
        links: links.iter().map(|l| l.id.clone()).collect(),
        probability: 1.0,
    };
    let net = Network {
        meta: Meta {
            name: name.into(),
            description: Some(format!(
                "built from an OpenStreetMap extract ({} ways); demand and timings are author input",
                corridor.len()
            )),
            assumed_spat: !signals.is_empty(),
            driver: Default::default(),
        },
        links,
        connectors,
        signals,
        stop_signs,
        inputs: vec![],
        routes: vec![route],
        eval_nodes: vec![],
    };
    net.validate()?;
    Ok((net, report))
}

#[cfg(test)]
mod tests;
