//! Bundled corridor scenarios.
//!
//! Four ready-to-run networks modeled on real roadways in and around
//! Columbus, Ohio: an urban arterial joining a freeway (`route19`), an
//! urban-only signalized street (`route15`), a freeway merge section
//! (`us33`), and a downtown shuttle loop (`cosi`). Geometry, control
//! placement, and speed limits follow the mapped roads; demand volumes are
//! calibrated (documented in each file's description), and all signal
//! programs are assumptions flagged via `meta.assumed_spat`.

use crate::net::{load_network, Network};

pub const ROUTE19_JSON: &str = include_str!("../scenarios/route19.json");
pub const ROUTE15_JSON: &str = include_str!("../scenarios/route15.json");
pub const US33_JSON: &str = include_str!("../scenarios/us33.json");
pub const COSI_JSON: &str = include_str!("../scenarios/cosi.json");

/// `(name, document)` for every bundled scenario, in canonical order.
pub fn bundled() -> [(&'static str, &'static str); 4] {
    [
        ("route19", ROUTE19_JSON),
        ("route15", ROUTE15_JSON),
        ("us33", US33_JSON),
        ("cosi", COSI_JSON),
    ]
}

/// Look a bundled scenario up by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    bundled().into_iter().find(|(n, _)| *n == name).map(|(_, doc)| doc)
}

fn load(doc: &str) -> Network {
    load_network(doc).expect("bundled scenario validates")
}

pub fn route19() -> Network {
    load(ROUTE19_JSON)
}

pub fn route15() -> Network {
    load(ROUTE15_JSON)
}

pub fn us33() -> Network {
    load(US33_JSON)
}

pub fn cosi() -> Network {
    load(COSI_JSON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, NullObserver, SimConfig};
    use crate::metrics::{FuelEmissionModel, MetricsAccumulator, QueueConfig, Scope};
    use crate::net::LinkKind;

    fn route_length(net: &Network, route_id: &str) -> f64 {
        let route = net.routes.iter().find(|r| r.id == route_id).unwrap();
        route
            .links
            .iter()
            .map(|id| net.links.iter().find(|l| &l.id == id).unwrap().length_m)
            .sum()
    }

    #[test]
    fn all_bundled_scenarios_load_compile_and_round_trip() {
        for (name, doc) in bundled() {
            let net = load_network(doc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(net.meta.name, name);
            assert_eq!(net.eval_nodes.len(), 1, "{name}: one measurement region");
            let json = serde_json::to_string(&net).unwrap();
            assert_eq!(load_network(&json).unwrap(), net);
            net.compile().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(by_name(name).is_some());
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn inputs_sit_on_source_links() {
        // Entries must not share a lane entrance with a connector; keeping
        // every input on an unfed link guarantees that.
        for (name, doc) in bundled() {
            let net = load_network(doc).unwrap();
            for input in &net.inputs {
                assert!(
                    net.connectors.iter().all(|c| c.to_link != input.link),
                    "{name}: input link {} is fed by a connector",
                    input.link
                );
            }
        }
    }

    #[test]
    fn route19_matches_the_mapped_corridor() {
        let net = route19();
        let length = route_length(&net, "r19");
        assert!((length - 7000.0).abs() <= 70.0, "7 km within 1%: got {length}");
        assert_eq!(net.signals.len(), 5);
        assert!(net.links.iter().any(|l| l.kind == LinkKind::Urban));
        assert!(net.links.iter().any(|l| l.kind == LinkKind::Freeway));
        assert!(net.meta.assumed_spat);
    }

    #[test]
    fn route15_matches_the_mapped_corridor() {
        let net = route15();
        let length = route_length(&net, "r15");
        assert!((length - 7400.0).abs() <= 74.0, "7.4 km within 1%: got {length}");
        assert_eq!(net.signals.len(), 14);
        assert!(net.links.iter().all(|l| l.kind == LinkKind::Urban));
    }

    #[test]
    fn us33_is_a_freeway_with_a_single_lane_merge() {
        let net = us33();
        assert!(net.links.iter().all(|l| l.kind == LinkKind::Freeway));
        assert!(net.signals.is_empty() && net.stop_signs.is_empty());
        let ramp = net.links.iter().find(|l| l.id == "R").unwrap();
        assert_eq!(ramp.lanes, 1);
        let merge = net.links.iter().find(|l| l.id == "M").unwrap();
        assert_eq!(merge.lanes, 3, "mainline plus acceleration lane");
        // The acceleration lane ends: no connector leaves (M, lane 2).
        assert!(net
            .connectors
            .iter()
            .all(|c| !(c.from_link == "M" && c.from_lane == 2)));
    }

    #[test]
    fn cosi_is_a_single_lane_heavy_loop_with_stop_signs() {
        let net = cosi();
        let corridor: f64 = (1..=6)
            .map(|i| {
                net.links.iter().find(|l| l.id == format!("C{i}")).unwrap().length_m
            })
            .sum();
        assert!((corridor - 4500.0).abs() < 1.0, "4.5 km loop: got {corridor}");
        assert!(net.links.iter().filter(|l| l.lanes == 1).count() >= 4);
        assert_eq!(net.stop_signs.len(), 2);
        assert_eq!(net.signals.len(), 5);
        assert!(net.links.iter().all(|l| l.kind == LinkKind::Urban));
    }

    /// Hour-long zero-automation runs must process vehicle totals in the
    /// calibrated bands the bundled demand was chosen for.
    #[test]
    fn demand_calibration_holds_over_an_hour() {
        let targets =
            [("route19", 3996.0), ("route15", 1438.0), ("us33", 2176.0), ("cosi", 2410.0)];
        for (name, target) in targets {
            let net = load_network(by_name(name).unwrap()).unwrap().compile().unwrap();
            let cfg = SimConfig { duration_s: 3600.0, seed: 1, ..SimConfig::default() };
            let mut acc = MetricsAccumulator::new(
                &net,
                cfg.dt,
                FuelEmissionModel::default(),
                QueueConfig::default(),
            );
            let summary = run(&net, cfg, &mut acc).unwrap_or_else(|e| panic!("{name}: {e}"));
            let results = acc.finish();
            let count = results.full_network.vehicle_count as f64;
            assert_eq!(results.full_network.scope, Scope::FullNetwork);
            let lo = 0.75 * target;
            let hi = 1.25 * target;
            assert!(
                (summary.spawned as f64) >= lo && (summary.spawned as f64) <= hi,
                "{name}: spawned {} outside [{lo}, {hi}]",
                summary.spawned
            );
            assert!(
                count >= lo && count <= hi,
                "{name}: processed {count} vehicles, outside [{lo}, {hi}]"
            );
        }
    }

    /// Queues must actually form and clear at the measured intersections;
    /// a scenario where nothing ever queues would make the queue metrics
    /// vacuous.
    #[test]
    fn signalized_scenarios_develop_queues_at_the_node() {
        for name in ["route19", "route15", "cosi"] {
            let net = load_network(by_name(name).unwrap()).unwrap().compile().unwrap();
            let cfg = SimConfig { duration_s: 500.0, seed: 2, ..SimConfig::default() };
            let mut acc = MetricsAccumulator::new(
                &net,
                cfg.dt,
                FuelEmissionModel::default(),
                QueueConfig::default(),
            );
            run(&net, cfg, &mut acc).unwrap();
            let node = acc.finish().node;
            assert!(node.max_queue_m > 0.0, "{name}: no queue ever formed");
            assert!(node.vehicle_count > 0, "{name}: nothing reached the node");
        }
    }

    #[test]
    fn every_scenario_survives_a_mixed_fleet_run() {
        for (name, doc) in bundled() {
            let net = load_network(doc).unwrap().compile().unwrap();
            let cfg = SimConfig {
                duration_s: 300.0,
                penetration: 0.5,
                seed: 3,
                ..SimConfig::default()
            };
            let summary =
                run(&net, cfg, &mut NullObserver).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(summary.entered > 0, "{name}: no traffic entered");
            assert!(summary.spawned_av > 0, "{name}: no automated vehicles spawned");
        }
    }
}
