//! Response shapes that are not engine types as they stand.

use dtm_core::engine::Engine;
use dtm_core::network::{
    Area, ControlSegment, ElementKind, Link, LinkThresholds, NodeKind, Point, RoadNetwork,
    RoutePart, RoutePartThreshold,
};
use dtm_core::sim::{Bottleneck, TrafficState};
use dtm_core::strategy::PendingDecision;
use dtm_core::{LinkId, NodeId, RoutePartId, SegmentId};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct NodeView {
    pub id: NodeId,
    pub kind: NodeKind,
    pub element_kind: ElementKind,
    pub label: String,
    pub position: Point,
    pub in_links: Vec<LinkId>,
    pub out_links: Vec<LinkId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkView {
    #[serde(flatten)]
    pub link: Link,
    pub road_class: String,
    pub thresholds: Option<LinkThresholds>,
    pub segments: Vec<SegmentId>,
    pub route_parts: Vec<RoutePartId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoutePartView {
    #[serde(flatten)]
    pub route_part: RoutePart,
    pub threshold: Option<RoutePartThreshold>,
}

/// The road network with its taxonomy and the policy resolved per element.
#[derive(Clone, Debug, Serialize)]
pub struct NetworkView {
    pub version: u32,
    pub scenario: String,
    pub content_hash: String,
    pub nodes: Vec<NodeView>,
    pub links: Vec<LinkView>,
    pub segments: Vec<ControlSegment>,
    pub route_parts: Vec<RoutePartView>,
    pub areas: Vec<Area>,
    pub kind_counts: BTreeMap<ElementKind, usize>,
}

impl NetworkView {
    pub fn new(scenario: &str, content_hash: &str, net: &RoadNetwork) -> Self {
        let link_ids = |ls: &[usize]| {
            ls.iter()
                .map(|&l| net.links()[l].id.clone())
                .collect::<Vec<_>>()
        };
        let policy = net.policy();
        Self {
            version: crate::API_VERSION,
            scenario: scenario.to_owned(),
            content_hash: content_hash.to_owned(),
            nodes: net
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, n)| NodeView {
                    id: n.id.clone(),
                    kind: n.kind,
                    element_kind: ElementKind::of_node(n.kind),
                    label: n.label.clone(),
                    position: n.position,
                    in_links: link_ids(net.in_links(i)),
                    out_links: link_ids(net.out_links(i)),
                })
                .collect(),
            links: net
                .links()
                .iter()
                .enumerate()
                .map(|(i, l)| LinkView {
                    road_class: policy.road_class(&l.id).to_owned(),
                    thresholds: policy.link_threshold(&l.id).copied(),
                    segments: net
                        .segments_of_link(i)
                        .iter()
                        .map(|&s| net.control_segments()[s].id.clone())
                        .collect(),
                    route_parts: net
                        .route_parts_of_link(i)
                        .iter()
                        .map(|&r| net.route_parts()[r].id.clone())
                        .collect(),
                    link: l.clone(),
                })
                .collect(),
            segments: net.control_segments().to_vec(),
            route_parts: net
                .route_parts()
                .iter()
                .map(|r| RoutePartView {
                    threshold: policy.route_part_threshold(&r.id).copied(),
                    route_part: r.clone(),
                })
                .collect(),
            areas: net.areas().to_vec(),
            kind_counts: net.kind_counts(),
        }
    }
}

/// Clock, pace and the last completed traffic state.
#[derive(Clone, Debug, Serialize)]
pub struct StateView {
    pub tick: u64,
    pub paused: bool,
    pub rate: f64,
    pub auto_confirm: bool,
    pub last_seq: u64,
    pub state_hash: String,
    pub traffic: TrafficState,
    pub bottlenecks: Vec<Bottleneck>,
    pub pending_decisions: Vec<PendingDecision>,
}

impl StateView {
    pub fn of(e: &Engine) -> Self {
        Self {
            tick: e.tick(),
            paused: e.is_paused(),
            rate: e.rate(),
            auto_confirm: e.auto_confirm(),
            last_seq: e.last_seq(),
            state_hash: e.state_hash(),
            traffic: e.traffic_state(),
            bottlenecks: e.bottlenecks().to_vec(),
            pending_decisions: e.pending_decisions().cloned().collect(),
        }
    }
}
