//! Small network builders shared by unit tests.

use crate::network::{
    EdgeRecord, LinkThresholds, NetworkDocument, NodeKind, NodeRecord, PolicyDocument, RoadNetwork,
    RoutePartThreshold, SegmentRecord, NETWORK_SCHEMA_VERSION,
};
use std::collections::BTreeMap;

pub fn node(id: &str, kind: NodeKind, x: f64) -> NodeRecord {
    NodeRecord {
        id: id.to_owned(),
        kind,
        x: Some(x),
        y: Some(0.0),
        lat: None,
        lon: None,
        label: String::new(),
    }
}

pub fn edge(id: &str, from: &str, to: &str, capacity: f64) -> EdgeRecord {
    EdgeRecord {
        id: id.to_owned(),
        from: from.to_owned(),
        to: to.to_owned(),
        length: 500.0,
        capacity,
        free_flow_speed: 50.0,
        lanes: 1,
    }
}

pub fn segment(id: &str, links: &[&str], base: f64, boost: f64) -> SegmentRecord {
    SegmentRecord {
        id: id.to_owned(),
        member_links: links.iter().map(|s| s.to_string()).collect(),
        base_capacity: base,
        boost_capacity: boost,
        state: Default::default(),
    }
}

pub fn thresholds(max_queue: f64) -> LinkThresholds {
    LinkThresholds {
        max_density: 150.0,
        max_queue,
        min_speed_ratio: 0.05,
    }
}

pub fn doc(nodes: Vec<NodeRecord>, edges: Vec<EdgeRecord>) -> NetworkDocument {
    NetworkDocument {
        schema_version: NETWORK_SCHEMA_VERSION,
        origin: None,
        nodes,
        edges,
        control_segments: Vec::new(),
        areas: Vec::new(),
        policy: PolicyDocument {
            class_thresholds: BTreeMap::from([("default".to_owned(), thresholds(20.0))]),
            default_route_part_threshold: Some(RoutePartThreshold {
                max_travel_time_ratio: 1.5,
            }),
            ..Default::default()
        },
    }
}

pub fn build(d: &NetworkDocument) -> RoadNetwork {
    let (net, report) = d.build();
    assert!(report.is_valid(), "{report}");
    net
}

/// `a -> b` single link with the given capacity.
pub fn single_link(capacity: f64) -> RoadNetwork {
    build(&doc(
        vec![
            node("a", NodeKind::Regular, 0.0),
            node("b", NodeKind::Regular, 500.0),
        ],
        vec![edge("L", "a", "b", capacity)],
    ))
}

/// Two branches between choice nodes `c1` and `c2`:
/// `o -> c1 -> {a -> k | p} -> c2 -> d`. The upper branch (`A1 A2 A3`)
/// has a control node `k` and control segment `S` over `A2`; the lower
/// branch is `B1 B2`.
pub fn diamond() -> RoadNetwork {
    let mut d = doc(
        vec![
            node("o", NodeKind::Regular, 0.0),
            node("c1", NodeKind::ChoiceAndControl, 500.0),
            node("a", NodeKind::Regular, 1000.0),
            node("k", NodeKind::Control, 1500.0),
            node("c2", NodeKind::Choice, 2000.0),
            node("p", NodeKind::Regular, 1000.0),
            node("d", NodeKind::Regular, 2500.0),
        ],
        vec![
            edge("E", "o", "c1", 1800.0),
            edge("A1", "c1", "a", 1800.0),
            edge("A2", "a", "k", 1800.0),
            edge("A3", "k", "c2", 1800.0),
            edge("B1", "c1", "p", 1800.0),
            edge("B2", "p", "c2", 1800.0),
            edge("X", "c2", "d", 1800.0),
        ],
    );
    d.nodes[5].y = Some(-400.0);
    d.control_segments
        .push(segment("S", &["A2"], 1800.0, 2700.0));
    build(&d)
}
