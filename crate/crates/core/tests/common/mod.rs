//! Random network documents for property tests.
#![allow(dead_code)]

pub mod checks;

use dtm_core::network::{
    EdgeRecord, LinkThresholds, NetworkDocument, NodeKind, NodeRecord, PolicyDocument, RoadNetwork,
    RoutePartThreshold, SegmentRecord, NETWORK_SCHEMA_VERSION,
};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub fn kind_strategy() -> impl Strategy<Value = NodeKind> {
    prop_oneof![
        Just(NodeKind::Choice),
        Just(NodeKind::Control),
        Just(NodeKind::ChoiceAndControl),
        Just(NodeKind::Regular),
    ]
}

/// Raw shape of a network before it is turned into a document.
#[derive(Clone, Debug)]
pub struct Shape {
    pub kinds: Vec<NodeKind>,
    pub edges: Vec<(usize, usize, f64)>,
    /// First link of an optional control segment, and whether it runs on
    /// into the next link.
    pub segment: Option<(usize, bool)>,
}

/// Weakly connected directed networks of `2..=max_nodes` nodes. With
/// `terminated`, every directed cycle passes through a choice-like node, so
/// route-part derivation always succeeds.
pub fn shape(max_nodes: usize, terminated: bool) -> impl Strategy<Value = Shape> {
    (2..=max_nodes)
        .prop_flat_map(move |n| {
            let kinds = prop::collection::vec(kind_strategy(), n);
            let tree = prop::collection::vec((any::<prop::sample::Index>(), any::<bool>()), n - 1);
            let extra = prop::collection::vec((0..n, 0..n), 0..=n);
            let caps =
                prop::collection::vec(prop::sample::select(vec![900.0, 1800.0, 2700.0]), 2 * n);
            let seg = prop::option::of((any::<prop::sample::Index>(), any::<bool>()));
            (kinds, tree, extra, caps, seg)
        })
        .prop_map(move |(kinds, tree, extra, caps, seg)| {
            let mut pairs = Vec::new();
            for (i, (p, forward)) in tree.into_iter().enumerate() {
                let child = i + 1;
                let parent = p.index(child);
                pairs.push(if forward {
                    (parent, child)
                } else {
                    (child, parent)
                });
            }
            pairs.extend(extra.into_iter().filter(|(u, v)| u != v));
            if terminated {
                for e in &mut pairs {
                    if e.0 > e.1 && !kinds[e.1].is_choice() {
                        *e = (e.1, e.0);
                    }
                }
            }
            let mut seen = BTreeSet::new();
            pairs.retain(|e| seen.insert(*e));
            let edges: Vec<(usize, usize, f64)> = pairs
                .into_iter()
                .enumerate()
                .map(|(i, (u, v))| (u, v, caps[i % caps.len()]))
                .collect();
            let segment = seg.map(|(ix, two)| (ix.index(edges.len()), two));
            Shape {
                kinds,
                edges,
                segment,
            }
        })
}

pub fn document(s: &Shape) -> NetworkDocument {
    let nodes = s
        .kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| NodeRecord {
            id: format!("n{i}"),
            kind,
            x: Some(400.0 * i as f64),
            y: Some(100.0 * (i % 3) as f64),
            lat: None,
            lon: None,
            label: String::new(),
        })
        .collect();
    let edges = s
        .edges
        .iter()
        .enumerate()
        .map(|(i, &(u, v, capacity))| EdgeRecord {
            id: format!("e{i}"),
            from: format!("n{u}"),
            to: format!("n{v}"),
            length: 300.0 + 50.0 * (i % 5) as f64,
            capacity,
            free_flow_speed: 50.0,
            lanes: 1,
        })
        .collect();
    let mut control_segments = Vec::new();
    if let Some((first, two)) = s.segment {
        let mut members = vec![first];
        let head = s.edges[first].1;
        if two {
            if let Some(next) = s
                .edges
                .iter()
                .position(|e| e.0 == head && e.1 != s.edges[first].0)
            {
                members.push(next);
            }
        }
        let base = members
            .iter()
            .map(|&m| s.edges[m].2)
            .fold(f64::INFINITY, f64::min);
        control_segments.push(SegmentRecord {
            id: "S0".to_owned(),
            member_links: members.iter().map(|m| format!("e{m}")).collect(),
            base_capacity: base,
            boost_capacity: base * 1.5,
            state: Default::default(),
        });
    }
    NetworkDocument {
        schema_version: NETWORK_SCHEMA_VERSION,
        origin: None,
        nodes,
        edges,
        control_segments,
        areas: Vec::new(),
        policy: PolicyDocument {
            class_thresholds: BTreeMap::from([(
                "default".to_owned(),
                LinkThresholds {
                    max_density: 120.0,
                    max_queue: 15.0,
                    min_speed_ratio: 0.3,
                },
            )]),
            default_route_part_threshold: Some(RoutePartThreshold {
                max_travel_time_ratio: 1.5,
            }),
            ..Default::default()
        },
    }
}

/// Valid networks of at most `max_nodes` nodes.
pub fn network(max_nodes: usize) -> impl Strategy<Value = RoadNetwork> {
    shape(max_nodes, true).prop_map(|s| {
        let (net, report) = document(&s).build();
        assert!(
            report.is_valid(),
            "generator produced an invalid network: {report}"
        );
        net
    })
}

/// Node indices reachable from `from` along directed links.
pub fn reachable(net: &RoadNetwork, from: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([from]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &l in net.out_links(u) {
            let (_, v) = net.link_ends(l).unwrap();
            if seen.insert(v) {
                q.push_back(v);
            }
        }
    }
    seen
}

/// Every `(origin, destination)` pair with a directed path, origin first.
pub fn od_pairs(net: &RoadNetwork) -> Vec<(usize, usize)> {
    (0..net.nodes().len())
        .flat_map(|o| {
            reachable(net, o)
                .into_iter()
                .filter(move |&d| d != o)
                .map(move |d| (o, d))
        })
        .collect()
}
