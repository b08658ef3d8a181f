use super::*;
use crate::driver::SignalState;
use crate::net::load_network;
use proptest::prelude::*;

/// Independent great-circle oracle: the atan2 formulation instead of the
/// half-angle haversine used by the implementation.
fn oracle_distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2)
        + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2))
    .sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    EARTH_RADIUS_M * y.atan2(x)
}

/// Degrees of latitude spanning `meters` along a meridian on the mean sphere.
fn lat_step(meters: f64) -> f64 {
    (meters / EARTH_RADIUS_M).to_degrees()
}

fn node(id: i64, lat: f64, lon: f64, tags: &str) -> String {
    if tags.is_empty() {
        format!(r#"<node id="{id}" lat="{lat}" lon="{lon}"/>"#)
    } else {
        let tag_xml: String = tags
            .split(';')
            .map(|kv| {
                let (k, v) = kv.split_once('=').unwrap();
                format!(r#"<tag k="{k}" v="{v}"/>"#)
            })
            .collect();
        format!(r#"<node id="{id}" lat="{lat}" lon="{lon}">{tag_xml}</node>"#)
    }
}

fn way(id: i64, refs: &[i64], tags: &str) -> String {
    let nd_xml: String = refs.iter().map(|r| format!(r#"<nd ref="{r}"/>"#)).collect();
    let tag_xml: String = tags
        .split(';')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap();
            format!(r#"<tag k="{k}" v="{v}"/>"#)
        })
        .collect();
    format!(r#"<way id="{id}">{nd_xml}{tag_xml}</way>"#)
}

fn doc(parts: &[String]) -> String {
    format!(r#"<?xml version="1.0"?><osm version="0.6">{}</osm>"#, parts.concat())
}

fn parse(parts: &[String]) -> RawGraph {
    parse_osm(doc(parts).as_bytes()).unwrap()
}

// ------------------------------------------------------------- XML parsing --

#[test]
fn minimal_extract_parses() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.01, -83.0, ""),
        way(10, &[1, 2], "highway=residential"),
    ]);
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(g.ways.len(), 1);
    assert_eq!(g.ways[0].nodes, vec![1, 2]);
    assert_eq!(g.ways[0].tags["highway"], "residential");
    assert!((g.nodes[&2].lat - 40.01).abs() < 1e-12);
}

#[test]
fn control_tags_stay_on_their_nodes() {
    let g = parse(&[
        node(1, 40.0, -83.0, "highway=traffic_signals"),
        node(2, 40.01, -83.0, "highway=stop"),
        way(10, &[1, 2], "highway=residential"),
    ]);
    assert_eq!(g.nodes[&1].tags["highway"], "traffic_signals");
    assert_eq!(g.nodes[&2].tags["highway"], "stop");
}

#[test]
fn dangling_reference_names_the_way() {
    let text = doc(&[node(1, 40.0, -83.0, ""), way(42, &[1, 7], "")]);
    let err = parse_osm(text.as_bytes()).unwrap_err();
    match err {
        IngestError::DanglingRef { way, node } => {
            assert_eq!((way, node), (42, 7));
        }
        other => panic!("wrong error: {other}"),
    }
    assert!(err.to_string().contains("way 42"));
    assert!(err.to_string().contains("node 7"));

    let err = parse_osm(doc(&[way(5, &[9], "")]).as_bytes()).unwrap_err();
    assert!(matches!(err, IngestError::DanglingRef { way: 5, node: 9 }));
}

#[test]
fn malformed_xml_is_reported() {
    let err = parse_osm(&b"<osm><node id=\"1\" lat=\"40"[..]).unwrap_err();
    assert!(matches!(err, IngestError::Xml(_)));
    let err = parse_osm(&b"<osm><node lat=\"40.0\" lon=\"-83.0\"/></osm>"[..]).unwrap_err();
    assert!(err.to_string().contains("id"));
}

#[test]
fn self_closing_and_nested_elements_parse_alike() {
    let nested = parse(&[
        r#"<node id="1" lat="40.0" lon="-83.0"></node>"#.to_string(),
        node(2, 40.01, -83.0, ""),
        way(10, &[1, 2], ""),
    ]);
    let flat = parse(&[node(1, 40.0, -83.0, ""), node(2, 40.01, -83.0, ""), way(10, &[1, 2], "")]);
    assert_eq!(nested, flat);
}

#[test]
fn relations_and_unknown_elements_are_ignored() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.01, -83.0, ""),
        way(10, &[1, 2], ""),
        r#"<relation id="99"><member type="way" ref="10" role=""/><tag k="type" v="route"/></relation>"#
            .to_string(),
    ]);
    assert_eq!(g.ways.len(), 1);
    assert!(g.ways[0].tags.is_empty(), "relation tag must not leak onto the way");
}

// -------------------------------------------------------------- speed tags --

#[test]
fn speed_limits_convert_by_unit() {
    let d = IngestDefaults::default();
    let (v, w) = parse_speed_limit("35 mph", "tertiary", &d);
    assert!((v - 15.6464).abs() < 1e-9);
    assert!(w.is_none());

    let (v, w) = parse_speed_limit("50", "residential", &d);
    assert!((v - 50.0 / 3.6).abs() < 1e-9);
    assert!(w.is_none());

    let (v, w) = parse_speed_limit("30 km/h", "residential", &d);
    assert!((v - 30.0 / 3.6).abs() < 1e-9);
    assert!(w.is_none());

    let (v, w) = parse_speed_limit("", "residential", &d);
    assert!((v - 13.9).abs() < 1e-12, "missing tag falls back silently");
    assert!(w.is_none());

    let (v, w) = parse_speed_limit("fast", "residential", &d);
    assert!((v - 13.9).abs() < 1e-12);
    assert!(w.unwrap().contains("fast"));
}

proptest! {
    #[test]
    fn speed_limit_parsing_is_total(text in "\\PC*", class in "[a-z_]{0,12}") {
        let d = IngestDefaults::default();
        let (v, _) = parse_speed_limit(&text, &class, &d);
        prop_assert!(v > 0.0 && v.is_finite());
    }
}

#[test]
fn defaults_must_be_positive() {
    let mut d = IngestDefaults::default();
    assert!(d.validate().is_ok());
    d.fallback.lanes = 0;
    assert!(d.validate().is_err());
    let mut d = IngestDefaults::default();
    d.classes.insert("primary".into(), ClassDefaults { lanes: 2, speed_mps: 0.0 });
    assert!(d.validate().is_err());
    let mut d = IngestDefaults::default();
    d.signal_phases.clear();
    assert!(d.validate().is_err());
}

// --------------------------------------------------------- corridor builds --

#[test]
fn lone_way_becomes_one_link_of_great_circle_length() {
    // 1000 m along the meridian through (40 N, 83 W).
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(1000.0), -83.0, ""),
        way(10, &[1, 2], "highway=residential"),
    ]);
    let (net, report) =
        build_network(&g, &IngestDefaults::default(), &[10], "meridian").unwrap();
    assert_eq!(net.links.len(), 1);
    let link = &net.links[0];
    assert!((link.length_m - 1000.0).abs() < 1.0, "within 0.1%: got {}", link.length_m);
    assert_eq!(link.lanes, 1);
    assert!((link.speed_limit_mps - 13.9).abs() < 1e-12);
    assert_eq!(link.kind, crate::net::LinkKind::Urban);
    assert!(net.signals.is_empty() && net.stop_signs.is_empty());
    assert!(!net.meta.assumed_spat);
    assert_eq!(net.routes.len(), 1);
    assert_eq!(net.routes[0].links, vec!["L01"]);
    assert_eq!(report.links, 1);
    assert!((report.path_length_m - link.length_m).abs() < 1e-9);
}

#[test]
fn interior_signal_lands_at_its_arc_position() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(600.0), -83.0, "highway=traffic_signals"),
        node(3, 40.0 + lat_step(1000.0), -83.0, ""),
        way(10, &[1, 2, 3], "highway=residential"),
    ]);
    let (net, report) = build_network(&g, &IngestDefaults::default(), &[10], "sig").unwrap();
    assert_eq!(net.links.len(), 1, "signals do not cut links");
    assert_eq!(net.signals.len(), 1);
    let s = &net.signals[0];
    assert_eq!(s.link, "L01");
    assert!((s.position_m - 600.0).abs() < 1.0);
    assert_eq!(s.phases.len(), 3);
    assert_eq!(s.phases[0].state, SignalState::Green);
    assert!((s.cycle_s() - 90.0).abs() < 1e-12);
    assert!(net.meta.assumed_spat, "default program is an assumption");
    assert_eq!(report.signals, 1);
}

#[test]
fn stop_sign_node_becomes_a_stop_sign() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(300.0), -83.0, "highway=stop"),
        node(3, 40.0 + lat_step(800.0), -83.0, ""),
        way(10, &[1, 2, 3], "highway=residential"),
    ]);
    let (net, report) = build_network(&g, &IngestDefaults::default(), &[10], "stop").unwrap();
    assert_eq!(net.stop_signs.len(), 1);
    assert!((net.stop_signs[0].position_m - 300.0).abs() < 1.0);
    assert!(!net.meta.assumed_spat, "no signal program was invented");
    assert_eq!(report.stop_signs, 1);
}

#[test]
fn lane_and_speed_tags_override_class_defaults() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(500.0), -83.0, ""),
        way(10, &[1, 2], "highway=residential;lanes=2;maxspeed=35 mph"),
    ]);
    let (net, report) = build_network(&g, &IngestDefaults::default(), &[10], "tags").unwrap();
    assert_eq!(net.links[0].lanes, 2);
    assert!((net.links[0].speed_limit_mps - 15.6464).abs() < 1e-9);
    assert!(report.warnings.is_empty());

    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(500.0), -83.0, ""),
        way(10, &[1, 2], "highway=residential;lanes=two;maxspeed=slow"),
    ]);
    let (net, report) = build_network(&g, &IngestDefaults::default(), &[10], "bad").unwrap();
    assert_eq!(net.links[0].lanes, 1);
    assert!((net.links[0].speed_limit_mps - 13.9).abs() < 1e-12);
    assert_eq!(report.warnings.len(), 2);
}

#[test]
fn motorway_class_maps_to_freeway() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0 + lat_step(2000.0), -83.0, ""),
        way(10, &[1, 2], "highway=motorway;lanes=2"),
    ]);
    let (net, _) = build_network(&g, &IngestDefaults::default(), &[10], "fwy").unwrap();
    assert_eq!(net.links[0].kind, crate::net::LinkKind::Freeway);
    assert!((net.links[0].speed_limit_mps - 65.0 * 0.44704).abs() < 1e-9);
}

#[test]
fn way_boundaries_cut_links_and_get_connectors() {
    let mid = 40.0 + lat_step(400.0);
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, mid, -83.0, "highway=traffic_signals"),
        node(3, mid + lat_step(700.0), -83.0, ""),
        way(10, &[1, 2], "highway=secondary;lanes=2"),
        way(11, &[2, 3], "highway=secondary;lanes=2"),
    ]);
    let (net, _) = build_network(&g, &IngestDefaults::default(), &[10, 11], "pair").unwrap();
    assert_eq!(net.links.len(), 2);
    assert!((net.links[0].length_m - 400.0).abs() < 1.0);
    assert!((net.links[1].length_m - 700.0).abs() < 1.0);
    assert_eq!(net.connectors.len(), 2, "lane-for-lane joins");
    assert_eq!(net.routes[0].links, vec!["L01", "L02"]);
    // The shared node is a boundary: its stop line closes the upstream link.
    assert_eq!(net.signals.len(), 1);
    assert_eq!(net.signals[0].link, "L01");
    assert!((net.signals[0].position_m - net.links[0].length_m).abs() < 1e-9);
}

#[test]
fn reversed_way_still_chains() {
    let mid = 40.0 + lat_step(400.0);
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, mid, -83.0, ""),
        node(3, mid + lat_step(700.0), -83.0, ""),
        way(10, &[1, 2], "highway=residential"),
        way(11, &[3, 2], "highway=residential"), // drawn against travel direction
    ]);
    let (net, _) = build_network(&g, &IngestDefaults::default(), &[10, 11], "rev").unwrap();
    assert_eq!(net.links.len(), 2);
    assert!((net.links[1].length_m - 700.0).abs() < 1.0);
}

#[test]
fn branch_nodes_cut_a_single_way() {
    // One corridor way with two side streets touching its middle node:
    // three ways share node 2, so it is a junction and the way splits there.
    let mid = 40.0 + lat_step(500.0);
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, mid, -83.0, ""),
        node(3, mid + lat_step(500.0), -83.0, ""),
        node(4, mid, -82.99, ""),
        node(5, mid, -83.01, ""),
        way(10, &[1, 2, 3], "highway=secondary"),
        way(20, &[4, 2], "highway=residential"),
        way(21, &[2, 5], "highway=residential"),
    ]);
    let (net, _) = build_network(&g, &IngestDefaults::default(), &[10], "branch").unwrap();
    assert_eq!(net.links.len(), 2);
    assert_eq!(net.connectors.len(), 1);

    // With only one side street (two ways at node 2) nothing is cut.
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, mid, -83.0, ""),
        node(3, mid + lat_step(500.0), -83.0, ""),
        node(4, mid, -82.99, ""),
        way(10, &[1, 2, 3], "highway=secondary"),
        way(20, &[4, 2], "highway=residential"),
    ]);
    let (net, _) = build_network(&g, &IngestDefaults::default(), &[10], "thru").unwrap();
    assert_eq!(net.links.len(), 1);
}

#[test]
fn corridor_errors_are_specific() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.01, -83.0, ""),
        node(3, 40.02, -83.1, ""),
        node(4, 40.03, -83.1, ""),
        way(10, &[1, 2], ""),
        way(11, &[3, 4], ""),
    ]);
    let d = IngestDefaults::default();
    assert!(matches!(
        build_network(&g, &d, &[99], "x"),
        Err(IngestError::Corridor(_))
    ));
    let err = build_network(&g, &d, &[10, 11], "x").unwrap_err();
    assert!(err.to_string().contains("share no end node"), "{err}");
    assert!(matches!(build_network(&g, &d, &[], "x"), Err(IngestError::Corridor(_))));
}

#[test]
fn coincident_nodes_are_a_zero_length_error() {
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, 40.0, -83.0, ""),
        node(3, 40.01, -83.0, ""),
        way(10, &[1, 2, 3], ""),
    ]);
    let err = build_network(&g, &IngestDefaults::default(), &[10], "z").unwrap_err();
    assert!(matches!(err, IngestError::ZeroLength(2)));
}

#[test]
fn emitted_scenario_round_trips_through_the_file_format() {
    let mid = 40.0 + lat_step(400.0);
    let g = parse(&[
        node(1, 40.0, -83.0, ""),
        node(2, mid, -83.0, "highway=traffic_signals"),
        node(3, mid + lat_step(700.0), -83.0, "highway=stop"),
        node(4, mid + lat_step(1500.0), -83.0, ""),
        way(10, &[1, 2], "highway=primary;lanes=2;maxspeed=45 mph"),
        way(11, &[2, 3], "highway=primary;lanes=2;maxspeed=45 mph"),
        way(12, &[3, 4], "highway=primary;lanes=2"),
    ]);
    let (net, report) =
        build_network(&g, &IngestDefaults::default(), &[10, 11, 12], "corridor").unwrap();
    assert_eq!(report.links, 3);
    assert_eq!(report.signals, 1);
    assert_eq!(report.stop_signs, 1);
    let json = serde_json::to_string_pretty(&net).unwrap();
    let reloaded = load_network(&json).unwrap();
    assert_eq!(reloaded, net);
    reloaded.compile().unwrap();
}

proptest! {
    /// Emitted link lengths partition the corridor: their sum matches an
    /// independently computed great-circle path length within 0.1%.
    #[test]
    fn link_lengths_sum_to_the_path_length(
        steps in prop::collection::vec((2e-4f64..5e-3, -5e-3f64..5e-3), 2..8),
        split in 1usize..7,
    ) {
        let mut lat = 40.0f64;
        let mut lon = -83.0f64;
        let mut points = vec![(lat, lon)];
        for (dlat, dlon) in &steps {
            lat += dlat;
            lon += dlon;
            points.push((lat, lon));
        }
        let split = split.min(points.len() - 1);
        let ids: Vec<i64> = (1..=points.len() as i64).collect();
        let mut parts: Vec<String> = points
            .iter()
            .zip(&ids)
            .map(|((la, lo), id)| node(*id, *la, *lo, ""))
            .collect();
        parts.push(way(100, &ids[..=split], "highway=tertiary"));
        if split < points.len() - 1 {
            parts.push(way(101, &ids[split..], "highway=tertiary"));
        }
        let corridor: Vec<i64> = if split < points.len() - 1 { vec![100, 101] } else { vec![100] };
        let g = parse(&parts);
        let (net, report) = build_network(&g, &IngestDefaults::default(), &corridor, "p").unwrap();

        let oracle: f64 = points
            .windows(2)
            .map(|w| oracle_distance_m(w[0].0, w[0].1, w[1].0, w[1].1))
            .sum();
        let emitted: f64 = net.links.iter().map(|l| l.length_m).sum();
        prop_assert!((emitted - oracle).abs() <= 1e-3 * oracle,
            "emitted {emitted} oracle {oracle}");
        prop_assert!((report.path_length_m - emitted).abs() < 1e-9);
    }

    /// Every control-tagged corridor node yields exactly one stop line.
    #[test]
    fn control_counts_match_tagged_nodes(signal_mask in 1u8..7) {
        let mut parts = Vec::new();
        let mut expect_signals = 0;
        let mut expect_stops = 0;
        for i in 0..5i64 {
            let tag = if (1..4).contains(&i) {
                let bit = signal_mask >> (i - 1) & 1;
                if bit == 1 { expect_signals += 1; "highway=traffic_signals" }
                else { expect_stops += 1; "highway=stop" }
            } else {
                ""
            };
            parts.push(node(i + 1, 40.0 + lat_step(300.0 * i as f64), -83.0, tag));
        }
        parts.push(way(10, &[1, 2, 3], "highway=secondary"));
        parts.push(way(11, &[3, 4, 5], "highway=secondary"));
        let g = parse(&parts);
        let (net, _) = build_network(&g, &IngestDefaults::default(), &[10, 11], "c").unwrap();
        prop_assert_eq!(net.signals.len(), expect_signals);
        prop_assert_eq!(net.stop_signs.len(), expect_stops);
    }
}
